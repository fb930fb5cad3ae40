// Minimal SVG line chart for the demo-mode rank trajectory (rank 1 on top).

export interface RankPoint {
  round: number;
  rank: number;
}

export function renderRankChart(
  series: RankPoint[],
  width = 420,
  height = 160,
): string {
  if (series.length === 0) return "";
  const pad = 28;
  const maxRound = Math.max(1, ...series.map((p) => p.round));
  const maxRank = Math.max(...series.map((p) => p.rank), 2);
  const x = (round: number) => pad + (round / maxRound) * (width - 2 * pad);
  const y = (rank: number) =>
    pad + ((rank - 1) / (maxRank - 1)) * (height - 2 * pad);
  const points = series
    .map((p) => `${x(p.round).toFixed(1)},${y(p.rank).toFixed(1)}`)
    .join(" ");
  const dots = series
    .map(
      (p) =>
        `<circle cx="${x(p.round).toFixed(1)}" cy="${y(p.rank).toFixed(1)}" r="3"/>` +
        `<text x="${x(p.round).toFixed(1)}" y="${(y(p.rank) - 7).toFixed(1)}" ` +
        `class="chart-label">${p.rank}</text>`,
    )
    .join("");
  return (
    `<svg viewBox="0 0 ${width} ${height}" class="rank-chart" role="img" ` +
    `aria-label="target rank per round">` +
    `<line x1="${pad}" y1="${height - pad}" x2="${width - pad}" ` +
    `y2="${height - pad}" class="chart-axis"/>` +
    `<line x1="${pad}" y1="${pad}" x2="${pad}" y2="${height - pad}" ` +
    `class="chart-axis"/>` +
    `<text x="${pad}" y="${height - 8}" class="chart-label">round 0</text>` +
    `<text x="${width - pad}" y="${height - 8}" class="chart-label" ` +
    `text-anchor="end">round ${maxRound}</text>` +
    `<text x="4" y="${pad}" class="chart-label">rank 1</text>` +
    `<polyline fill="none" points="${points}" class="chart-line"/>` +
    dots +
    `</svg>`
  );
}
