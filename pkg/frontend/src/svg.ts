/**
 * Minimal deterministic SVG chart builder: linear/log axes, polylines,
 * shaded bands, vertical markers, and a legend. No DOM, no dependencies.
 */

export interface Scale {
  toPixel(v: number): number;
}

function linearScale(lo: number, hi: number, p0: number, p1: number): Scale {
  const span = hi - lo || 1;
  return { toPixel: (v) => p0 + ((v - lo) / span) * (p1 - p0) };
}

function logScale(lo: number, hi: number, p0: number, p1: number): Scale {
  const llo = Math.log10(lo);
  const span = Math.log10(hi) - llo || 1;
  return { toPixel: (v) => p0 + ((Math.log10(v) - llo) / span) * (p1 - p0) };
}

export interface CurveStyle {
  color: string;
  dash?: string;
  width?: number;
  marker?: boolean;
}

export interface Curve {
  label: string;
  x: number[];
  y: number[];
  style: CurveStyle;
}

export interface Band {
  label: string;
  x: number[];
  lo: number[];
  hi: number[];
  color: string;
  opacity?: number;
}

export interface VLine {
  label: string;
  x: number;
  color: string;
  dash?: string;
}

export interface PanelSpec {
  title: string;
  xLabel: string;
  yLabel: string;
  xLog?: boolean;
  yLog?: boolean;
  curves: Curve[];
  bands?: Band[];
  vlines?: VLine[];
}

const W = 460;
const H = 340;
const MARGIN = { left: 64, right: 16, top: 30, bottom: 44 };

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

function finitePositive(v: number, log: boolean): boolean {
  return Number.isFinite(v) && (!log || v > 0);
}

function dataRange(panel: PanelSpec, axis: "x" | "y"): [number, number] {
  const log = axis === "x" ? panel.xLog : panel.yLog;
  let lo = Infinity;
  let hi = -Infinity;
  const consider = (v: number) => {
    if (finitePositive(v, !!log)) {
      lo = Math.min(lo, v);
      hi = Math.max(hi, v);
    }
  };
  for (const c of panel.curves) {
    (axis === "x" ? c.x : c.y).forEach(consider);
  }
  for (const b of panel.bands ?? []) {
    if (axis === "x") b.x.forEach(consider);
    else {
      b.lo.forEach(consider);
      b.hi.forEach(consider);
    }
  }
  if (axis === "x") for (const v of panel.vlines ?? []) consider(v.x);
  if (!Number.isFinite(lo) || !Number.isFinite(hi)) {
    lo = log ? 0.1 : 0;
    hi = 1;
  }
  if (lo === hi) {
    lo = log ? lo / 2 : lo - 1;
    hi = log ? hi * 2 : hi + 1;
  }
  if (!log) {
    const pad = 0.05 * (hi - lo);
    return [lo - pad, hi + pad];
  }
  return [lo / 1.3, hi * 1.3];
}

function ticks(lo: number, hi: number, log: boolean): number[] {
  if (log) {
    const out: number[] = [];
    for (let e = Math.ceil(Math.log10(lo)); e <= Math.floor(Math.log10(hi)); e++) {
      out.push(10 ** e);
    }
    if (out.length === 0) out.push(lo, hi);
    if (out.length > 8) {
      const step = Math.ceil(out.length / 8);
      return out.filter((_, i) => i % step === 0);
    }
    return out;
  }
  const out: number[] = [];
  const step = (hi - lo) / 5;
  for (let i = 0; i <= 5; i++) out.push(lo + i * step);
  return out;
}

function fmt(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 0.01 && a < 10000) return Number(v.toPrecision(3)).toString();
  return v.toExponential(1);
}

function polylinePoints(xs: number[], ys: number[], sx: Scale, sy: Scale, xLog: boolean, yLog: boolean): string {
  const pts: string[] = [];
  for (let i = 0; i < xs.length; i++) {
    if (!finitePositive(xs[i], xLog) || !finitePositive(ys[i], yLog)) continue;
    pts.push(`${sx.toPixel(xs[i]).toFixed(2)},${sy.toPixel(ys[i]).toFixed(2)}`);
  }
  return pts.join(" ");
}

function renderPanel(panel: PanelSpec, ox: number, oy: number): string {
  const [xLo, xHi] = dataRange(panel, "x");
  const [yLo, yHi] = dataRange(panel, "y");
  const plotL = ox + MARGIN.left;
  const plotR = ox + W - MARGIN.right;
  const plotT = oy + MARGIN.top;
  const plotB = oy + H - MARGIN.bottom;
  const sx = (panel.xLog ? logScale : linearScale)(xLo, xHi, plotL, plotR);
  const sy = (panel.yLog ? logScale : linearScale)(yLo, yHi, plotB, plotT);
  const parts: string[] = [];

  parts.push(
    `<rect x="${plotL}" y="${plotT}" width="${plotR - plotL}" height="${plotB - plotT}" fill="none" stroke="#333" stroke-width="1"/>`
  );
  parts.push(
    `<text x="${ox + W / 2}" y="${oy + 16}" text-anchor="middle" font-size="13" font-weight="bold">${esc(panel.title)}</text>`
  );

  for (const t of ticks(xLo, xHi, !!panel.xLog)) {
    const px = sx.toPixel(t);
    if (px < plotL - 1 || px > plotR + 1) continue;
    parts.push(`<line x1="${px.toFixed(2)}" y1="${plotB}" x2="${px.toFixed(2)}" y2="${plotB + 4}" stroke="#333"/>`);
    parts.push(
      `<text x="${px.toFixed(2)}" y="${plotB + 16}" text-anchor="middle" font-size="10">${esc(fmt(t))}</text>`
    );
  }
  for (const t of ticks(yLo, yHi, !!panel.yLog)) {
    const py = sy.toPixel(t);
    if (py < plotT - 1 || py > plotB + 1) continue;
    parts.push(`<line x1="${plotL - 4}" y1="${py.toFixed(2)}" x2="${plotL}" y2="${py.toFixed(2)}" stroke="#333"/>`);
    parts.push(
      `<text x="${plotL - 6}" y="${(py + 3).toFixed(2)}" text-anchor="end" font-size="10">${esc(fmt(t))}</text>`
    );
  }
  parts.push(
    `<text x="${(plotL + plotR) / 2}" y="${oy + H - 8}" text-anchor="middle" font-size="11">${esc(panel.xLabel)}</text>`
  );
  parts.push(
    `<text x="${ox + 14}" y="${(plotT + plotB) / 2}" text-anchor="middle" font-size="11" transform="rotate(-90 ${ox + 14} ${(plotT + plotB) / 2})">${esc(panel.yLabel)}</text>`
  );

  for (const band of panel.bands ?? []) {
    const fwd: string[] = [];
    const back: string[] = [];
    for (let i = 0; i < band.x.length; i++) {
      if (!finitePositive(band.x[i], !!panel.xLog)) continue;
      if (!finitePositive(band.lo[i], !!panel.yLog) || !finitePositive(band.hi[i], !!panel.yLog)) continue;
      fwd.push(`${sx.toPixel(band.x[i]).toFixed(2)},${sy.toPixel(band.hi[i]).toFixed(2)}`);
      back.push(`${sx.toPixel(band.x[i]).toFixed(2)},${sy.toPixel(band.lo[i]).toFixed(2)}`);
    }
    back.reverse();
    if (fwd.length > 1) {
      parts.push(
        `<polygon points="${fwd.join(" ")} ${back.join(" ")}" fill="${band.color}" opacity="${band.opacity ?? 0.2}" stroke="none" data-label="${esc(band.label)}"/>`
      );
    }
  }

  for (const line of panel.vlines ?? []) {
    if (!finitePositive(line.x, !!panel.xLog)) continue;
    const px = sx.toPixel(line.x);
    if (px < plotL || px > plotR) continue;
    parts.push(
      `<line x1="${px.toFixed(2)}" y1="${plotT}" x2="${px.toFixed(2)}" y2="${plotB}" stroke="${line.color}" stroke-dasharray="${line.dash ?? "4 3"}" data-label="${esc(line.label)}"/>`
    );
  }

  for (const curve of panel.curves) {
    const pts = polylinePoints(curve.x, curve.y, sx, sy, !!panel.xLog, !!panel.yLog);
    if (pts.length === 0) continue;
    const dash = curve.style.dash ? ` stroke-dasharray="${curve.style.dash}"` : "";
    parts.push(
      `<polyline points="${pts}" fill="none" stroke="${curve.style.color}" stroke-width="${curve.style.width ?? 1.8}"${dash} data-label="${esc(curve.label)}"/>`
    );
    if (curve.style.marker) {
      for (const pair of pts.split(" ")) {
        const [px, py] = pair.split(",");
        parts.push(`<circle cx="${px}" cy="${py}" r="2.4" fill="${curve.style.color}"/>`);
      }
    }
  }

  // legend entries (curves, then bands, then markers)
  const entries: { label: string; color: string; dash?: string }[] = [];
  for (const c of panel.curves) entries.push({ label: c.label, color: c.style.color, dash: c.style.dash });
  for (const b of panel.bands ?? []) entries.push({ label: b.label, color: b.color });
  for (const v of panel.vlines ?? []) entries.push({ label: v.label, color: v.color, dash: v.dash ?? "4 3" });
  const seen = new Set<string>();
  let ly = plotT + 10;
  for (const entry of entries) {
    if (seen.has(entry.label)) continue;
    seen.add(entry.label);
    const dash = entry.dash ? ` stroke-dasharray="${entry.dash}"` : "";
    parts.push(
      `<line x1="${plotR - 120}" y1="${ly}" x2="${plotR - 96}" y2="${ly}" stroke="${entry.color}" stroke-width="2"${dash}/>`
    );
    parts.push(
      `<text x="${plotR - 90}" y="${ly + 3}" font-size="9" class="legend">${esc(entry.label)}</text>`
    );
    ly += 13;
  }

  return parts.join("\n");
}

export function renderFigure(panels: PanelSpec[], columns = 2): string {
  const cols = Math.min(columns, panels.length);
  const rows = Math.ceil(panels.length / cols);
  const width = cols * W;
  const height = rows * H;
  const body = panels
    .map((panel, i) => renderPanel(panel, (i % cols) * W, Math.floor(i / cols) * H))
    .join("\n");
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}" font-family="Helvetica, Arial, sans-serif">\n` +
    `<rect width="${width}" height="${height}" fill="white"/>\n${body}\n</svg>\n`
  );
}
