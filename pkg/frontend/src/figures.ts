import { Dataset, Row, SchemaError, distinct, num, requireColumns } from "./csv.js";
import { Band, Curve, PanelSpec, VLine, renderFigure } from "./svg.js";

/** One representative row per distinct key value, in ladder order. */
function firstRowPer(rows: Row[], key: string): Row[] {
  const seen = new Map<string, Row>();
  for (const row of rows) {
    if (!seen.has(row[key])) seen.set(row[key], row);
  }
  return [...seen.values()];
}

function column(rows: Row[], name: string): number[] {
  return rows.map((r) => num(r, name));
}

const BLUE = "#1f77b4";
const ORANGE = "#ff7f0e";
const RED = "#d62728";
const GREEN = "#2ca02c";
const BLACK = "#000000";
const CYAN = "#17becf";

function coherencePanels(data: Dataset, orders: number[], uValues: string[]): PanelSpec[] {
  requireColumns(data, ["u", "delta", "k", "sigma_mean", "sigma_lo", "sigma_hi", "envelope"]);
  const panels: PanelSpec[] = [];
  for (const k of orders) {
    const curves: Curve[] = [];
    const bands: Band[] = [];
    uValues.forEach((u, i) => {
      const rows = firstRowPer(
        data.rows.filter((r) => Number(r.k) === k && r.u === u),
        "delta"
      );
      if (rows.length === 0) return;
      const deltas = column(rows, "delta");
      const tone = i === 0 ? BLUE : GREEN;
      const label = uValues.length > 1 ? ` (u=${u})` : "";
      curves.push({
        label: `empirical mean${label}`,
        x: deltas,
        y: column(rows, "sigma_mean"),
        style: { color: tone },
      });
      curves.push({
        label: `coherence envelope${label}`,
        x: deltas,
        y: column(rows, "envelope"),
        style: { color: i === 0 ? RED : ORANGE, dash: "2 3" },
      });
      bands.push({
        label: `one std${label}`,
        x: deltas,
        lo: column(rows, "sigma_lo"),
        hi: column(rows, "sigma_hi"),
        color: tone,
      });
    });
    panels.push({
      title: `derivative order k=${k}`,
      xLabel: "separation",
      yLabel: "spectral constant",
      xLog: true,
      yLog: true,
      curves,
      bands,
    });
  }
  return panels;
}

function coherenceFigure(data: Dataset): string {
  const uValues = distinct(data.rows, "u");
  return renderFigure(coherencePanels(data, [0, 1, 2, 3], uValues.slice(0, 1)), 2);
}

function tailDecayFigure(data: Dataset): string {
  const uValues = distinct(data.rows, "u");
  if (uValues.length < 2) {
    throw new SchemaError("tail-decay dataset needs at least two tail exponents");
  }
  return renderFigure(coherencePanels(data, [0, 1], uValues), 2);
}

function basinFigure(data: Dataset, projected: boolean): string {
  const base = [
    "radius",
    "realization",
    "lambda_mean",
    "lambda_lo",
    "lambda_hi",
    "envelope_mean",
    "envelope_lo",
    "envelope_hi",
    "analytical",
    "baseline_lambda",
    "baseline_envelope",
  ];
  const restricted = projected
    ? ["restricted_mean", "restricted_lo", "restricted_hi", "baseline_restricted"]
    : [];
  requireColumns(data, [...base, ...restricted]);
  const rows = firstRowPer(data.rows, "radius");
  const radius = column(rows, "radius");
  const noisy = data.rows.some((r) => Number(r.realization) >= 0);

  const curves: Curve[] = [
    {
      label: "minimum eigenvalue",
      x: radius,
      y: column(rows, "lambda_mean"),
      style: { color: BLUE, width: 2 },
    },
    {
      label: "Weyl envelope estimate",
      x: radius,
      y: column(rows, "envelope_mean"),
      style: { color: ORANGE, dash: "6 3" },
    },
    {
      label: "analytical bound",
      x: radius,
      y: column(rows, "analytical"),
      style: { color: RED, dash: "2 3" },
    },
  ];
  if (projected) {
    curves.push({
      label: "restricted envelope",
      x: radius,
      y: column(rows, "restricted_mean"),
      style: { color: GREEN, dash: "8 3 2 3" },
    });
  }
  const bands: Band[] = [];
  if (noisy) {
    curves.push({
      label: "noiseless baseline",
      x: radius,
      y: column(rows, "baseline_lambda"),
      style: { color: BLACK, width: 1.2 },
    });
    bands.push({
      label: "one std",
      x: radius,
      lo: column(rows, "lambda_lo"),
      hi: column(rows, "lambda_hi"),
      color: BLUE,
    });
    bands.push({
      label: "one std (envelope)",
      x: radius,
      lo: column(rows, "envelope_lo"),
      hi: column(rows, "envelope_hi"),
      color: ORANGE,
    });
  }
  const panel: PanelSpec = {
    title: projected
      ? "projected basin probe (Euclidean x-radius)"
      : "joint basin probe (unmixing radius)",
    xLabel: projected ? "x-perturbation radius" : "unmixing radius",
    yLabel: "minimum eigenvalue",
    xLog: true,
    curves,
    bands,
  };
  return renderFigure([panel], 1);
}

function stabilityFigure(data: Dataset): string {
  requireColumns(data, [
    "snr_db",
    "joint_mean",
    "vp_mean",
    "bound_ls_mean",
    "bound_vp_mean",
  ]);
  const rows = firstRowPer(data.rows, "snr_db");
  const snr = column(rows, "snr_db");
  const panel: PanelSpec = {
    title: "recovery error vs noise level",
    xLabel: "SNR (dB)",
    yLabel: "unmixing-metric error",
    yLog: true,
    curves: [
      { label: "empirical joint", x: snr, y: column(rows, "joint_mean"), style: { color: BLUE, marker: true } },
      { label: "empirical projected", x: snr, y: column(rows, "vp_mean"), style: { color: GREEN, marker: true } },
      { label: "joint bound", x: snr, y: column(rows, "bound_ls_mean"), style: { color: BLUE, dash: "6 3" } },
      { label: "projected bound", x: snr, y: column(rows, "bound_vp_mean"), style: { color: GREEN, dash: "6 3" } },
    ],
  };
  return renderFigure([panel], 1);
}

function convergenceFigure(data: Dataset): string {
  requireColumns(data, [
    "u",
    "radius",
    "success_rate",
    "success_lo",
    "success_hi",
    "radius_convexity",
    "radius_convergence",
    "radius_lower",
    "radius_upper",
  ]);
  const panels: PanelSpec[] = [];
  for (const u of distinct(data.rows, "u")) {
    const rows = firstRowPer(
      data.rows.filter((r) => r.u === u),
      "radius"
    );
    const radius = column(rows, "radius");
    const head = rows[0];
    const vlines: VLine[] = [
      { label: "empirical convexity radius", x: num(head, "radius_convexity"), color: BLACK },
      { label: "empirical convergence radius", x: num(head, "radius_convergence"), color: CYAN },
      { label: "analytical lower radius", x: num(head, "radius_lower"), color: ORANGE },
      { label: "analytical upper radius", x: num(head, "radius_upper"), color: ORANGE },
    ];
    panels.push({
      title: `success rate (u=${u})`,
      xLabel: "initialization radius",
      yLabel: "success rate",
      xLog: true,
      curves: [
        {
          label: "success rate",
          x: radius,
          y: column(rows, "success_rate"),
          style: { color: BLUE, marker: true },
        },
      ],
      bands: [
        {
          label: "one std",
          x: radius,
          lo: column(rows, "success_lo"),
          hi: column(rows, "success_hi"),
          color: BLUE,
        },
      ],
      vlines,
    });
  }
  return renderFigure(panels, 2);
}

function tracesFigure(data: Dataset): string {
  requireColumns(data, ["u", "formulation", "solver", "iteration", "grad_norm"]);
  const solverColor: Record<string, string> = {
    levenberg_marquardt: BLUE,
    gauss_newton: ORANGE,
    gradient_descent: GREEN,
  };
  const panels: PanelSpec[] = [];
  for (const formulation of distinct(data.rows, "formulation")) {
    const curves: Curve[] = [];
    for (const u of distinct(data.rows, "u")) {
      for (const solver of distinct(data.rows, "solver")) {
        const rows = data.rows.filter(
          (r) => r.formulation === formulation && r.u === u && r.solver === solver
        );
        if (rows.length === 0) continue;
        curves.push({
          label: `${solver.replace(/_/g, " ")} (u=${u})`,
          x: column(rows, "iteration").map((v) => v + 1),
          y: column(rows, "grad_norm"),
          style: {
            color: solverColor[solver] ?? BLACK,
            dash: u === distinct(data.rows, "u")[0] ? undefined : "5 3",
          },
        });
      }
    }
    panels.push({
      title: `gradient norm per iteration (${formulation})`,
      xLabel: "iteration",
      yLabel: "gradient norm",
      xLog: true,
      yLog: true,
      curves,
    });
  }
  return renderFigure(panels, 2);
}

export const FIGURE_BUILDERS: Record<string, (data: Dataset) => string> = {
  coherence: coherenceFigure,
  "tail-decay": tailDecayFigure,
  "basin-ls": (d) => basinFigure(d, false),
  "basin-vp": (d) => basinFigure(d, true),
  stability: stabilityFigure,
  "convergence-region": convergenceFigure,
  traces: tracesFigure,
};

export function renderExperiment(experiment: string, data: Dataset): string {
  const builder = FIGURE_BUILDERS[experiment];
  if (!builder) {
    throw new SchemaError(`no figure defined for experiment kind: ${experiment}`);
  }
  if (data.rows.length === 0) {
    throw new SchemaError("dataset has no rows to plot");
  }
  return builder(data);
}
