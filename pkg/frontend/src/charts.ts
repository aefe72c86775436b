// Hand-rolled SVG charts. Pure string builders so tests can assert the
// rendered geometry without a DOM.

const W = 300;
const H = 90;
const PAD = 4;

export function scaleY(value: number, max: number): number {
    if (max <= 0) return H - PAD;
    return H - PAD - (value / max) * (H - 2 * PAD);
}

export function polylinePoints(values: Array<number | null>): string {
    const present = values.filter((v): v is number => v !== null);
    const max = present.length ? Math.max(...present, 1e-9) : 1;
    const dx = values.length > 1 ? (W - 2 * PAD) / (values.length - 1) : 0;
    return values
        .map((v, i) => (v === null ? null : `${(PAD + i * dx).toFixed(1)},${scaleY(v, max).toFixed(1)}`))
        .filter((p): p is string => p !== null)
        .join(" ");
}

export function barsSvg(counts: number[], title: string): string {
    const max = Math.max(...counts, 1);
    const bw = (W - 2 * PAD) / counts.length;
    const bars = counts
        .map((c, i) => {
            const h = ((c / max) * (H - 2 * PAD)).toFixed(1);
            const x = (PAD + i * bw).toFixed(1);
            const y = (H - PAD - Number(h)).toFixed(1);
            return `<rect x="${x}" y="${y}" width="${(bw * 0.85).toFixed(1)}" height="${h}"></rect>`;
        })
        .join("");
    return `<svg viewBox="0 0 ${W} ${H}" class="chart" role="img" aria-label="${title}">${bars}</svg>`;
}

export function sparklineSvg(values: Array<number | null>, title: string): string {
    const points = polylinePoints(values);
    return `<svg viewBox="0 0 ${W} ${H}" class="chart" role="img" aria-label="${title}">` +
        `<polyline fill="none" points="${points}"></polyline></svg>`;
}

export interface StackSeries {
    name: string;
    values: number[];
}

// Normalizes each column of a stack to fractions that sum to 1 (columns
// that sum to zero become all-zero).
export function normalizeStack(series: StackSeries[]): number[][] {
    if (!series.length) return [];
    const n = series[0].values.length;
    const out: number[][] = series.map(() => new Array(n).fill(0));
    for (let col = 0; col < n; col += 1) {
        const total = series.reduce((acc, s) => acc + s.values[col], 0);
        if (total > 0) {
            series.forEach((s, row) => {
                out[row][col] = s.values[col] / total;
            });
        }
    }
    return out;
}

export function stackedAreaSvg(series: StackSeries[], title: string): string {
    const fractions = normalizeStack(series);
    if (!fractions.length || !fractions[0].length) {
        return `<svg viewBox="0 0 ${W} ${H}" class="chart" role="img" aria-label="${title}"></svg>`;
    }
    const n = fractions[0].length;
    const dx = n > 1 ? (W - 2 * PAD) / (n - 1) : 0;
    let floor = new Array(n).fill(0);
    const layers: string[] = [];
    fractions.forEach((layer, idx) => {
        const top = layer.map((v, i) => floor[i] + v);
        const upper = top.map((v, i) =>
            `${(PAD + i * dx).toFixed(1)},${scaleY(v, 1).toFixed(1)}`);
        const lower = floor.map((v, i) =>
            `${(PAD + (n - 1 - i) * dx).toFixed(1)},${scaleY(floor[n - 1 - i], 1).toFixed(1)}`);
        layers.push(`<polygon class="layer-${idx}" data-name="${series[idx].name}" ` +
            `points="${upper.join(" ")} ${lower.join(" ")}"></polygon>`);
        floor = top;
    });
    return `<svg viewBox="0 0 ${W} ${H}" class="chart" role="img" aria-label="${title}">${layers.join("")}</svg>`;
}

// Log-scale wealth bins render with compact labels: 0, 1, 2-3, 4-7, ...
export function wealthBinLabel(edges: number[], index: number): string {
    if (index >= edges.length) return `≥${edges[edges.length - 1]}`;
    const lo = edges[index];
    const hi = index + 1 < edges.length ? edges[index + 1] - 1 : null;
    if (hi === null) return `≥${lo}`;
    return hi > lo ? `${lo}–${hi}` : `${lo}`;
}
