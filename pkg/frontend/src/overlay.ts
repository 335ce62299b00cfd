/** Client-side heatmap compositing: grayscale base + jet-colormapped
 *  attribution with adjustable alpha. Pure pixel math so the slider can
 *  re-render from cached bytes without touching the network. */

export interface Rgb {
    r: number;
    g: number;
    b: number;
}

/** Jet-like ramp over [0, 1]. */
export function jet(v: number): Rgb {
    const clamp = (x: number) => Math.max(0, Math.min(1, x));
    const t = clamp(v);
    return {
        r: clamp(1.5 - Math.abs(4 * t - 3)),
        g: clamp(1.5 - Math.abs(4 * t - 2)),
        b: clamp(1.5 - Math.abs(4 * t - 1)),
    };
}

/**
 * Blend a grayscale base with a heat layer into RGBA output.
 * base and heat are single-channel 0..255 arrays of equal length; the
 * inputs are never mutated.
 */
export function compositeOverlay(
    base: Uint8ClampedArray,
    heat: Uint8ClampedArray,
    alpha: number,
): Uint8ClampedArray<ArrayBuffer> {
    if (base.length !== heat.length) {
        throw new Error(`length mismatch: ${base.length} vs ${heat.length}`);
    }
    if (alpha < 0 || alpha > 1) throw new Error('alpha must be in [0, 1]');
    const out = new Uint8ClampedArray(base.length * 4);
    for (let i = 0; i < base.length; i++) {
        const g = base[i] / 255;
        const color = jet(heat[i] / 255);
        out[4 * i] = Math.round(((1 - alpha) * g + alpha * color.r) * 255);
        out[4 * i + 1] = Math.round(((1 - alpha) * g + alpha * color.g) * 255);
        out[4 * i + 2] = Math.round(((1 - alpha) * g + alpha * color.b) * 255);
        out[4 * i + 3] = 255;
    }
    return out;
}

/** Grayscale RGBA (used for the plain panels). */
export function grayToRgba(base: Uint8ClampedArray): Uint8ClampedArray<ArrayBuffer> {
    return compositeOverlay(base, new Uint8ClampedArray(base.length), 0);
}
