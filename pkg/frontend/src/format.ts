export function fmtCredits(n: number): string {
    return n.toLocaleString("en-US");
}

export function fmtStep(absStep: number, stepsPerDay: number): string {
    const day = Math.floor(absStep / stepsPerDay);
    const step = absStep % stepsPerDay;
    return `day ${day} · step ${String(step).padStart(2, "0")}`;
}

export function fmtPct(x: number | null, digits = 1): string {
    if (x === null || Number.isNaN(x)) return "–";
    return `${(100 * x).toFixed(digits)}%`;
}

export function fmtClass(name: string): string {
    const romans: Record<string, string> = {
        stable_development: "I · Stable Development",
        novice: "II · Novice",
        wealth_elite: "III · Wealth Elite",
        casual: "IV · Casual",
        high_skill: "V · High Skill",
    };
    return romans[name] ?? name;
}

export function escapeHtml(text: string): string {
    return text
        .replace(/&/g, "&amp;")
        .replace(/</g, "&lt;")
        .replace(/>/g, "&gt;")
        .replace(/"/g, "&quot;");
}
