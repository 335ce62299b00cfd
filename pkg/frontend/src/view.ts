import { PanelName, ScreeningRecord } from './types.js';

export interface ScreeningView {
    id: number;
    finalClass: ScreeningRecord['final_class'];
    badge: { label: string; tone: 'ok' | 'warn' | 'danger' };
    panels: PanelName[];
    stage2Prob: number;
    stage3Prob: number | null;
    flags: string[];
    panelUrls: Partial<Record<PanelName, string>>;
}

/** Mirror of the cascade gating: stage-3 panels exist only past stage 2. */
export function toScreeningView(record: ScreeningRecord): ScreeningView {
    const panels: PanelName[] = ['original', 'stage2_cam'];
    if (record.stage3 !== null) {
        panels.push('stage3_gradcam', 'guided');
    }
    const badge =
        record.final_class === 'NORMAL'
            ? { label: 'Normal', tone: 'ok' as const }
            : record.final_class === 'COVID'
              ? { label: 'COVID-19', tone: 'danger' as const }
              : { label: 'Pneumonia (non-COVID)', tone: 'warn' as const };
    const panelUrls: Partial<Record<PanelName, string>> = {};
    if (record.image) panelUrls.original = record.image;
    for (const name of ['stage2_cam', 'stage3_gradcam', 'guided'] as const) {
        if (record.heatmaps[name]) panelUrls[name] = record.heatmaps[name];
    }
    return {
        id: record.id,
        finalClass: record.final_class,
        badge,
        panels,
        stage2Prob: record.stage2.prob,
        stage3Prob: record.stage3 ? record.stage3.prob : null,
        flags: record.flags,
        panelUrls,
    };
}

export const PANEL_TITLES: Record<PanelName, string> = {
    original: 'A - Original',
    stage2_cam: 'B - Pneumonia regions (stage 2)',
    stage3_gradcam: 'C - COVID-19 regions (stage 3)',
    guided: 'D - Guided activation',
};

export function pageCount(total: number, pageSize: number): number {
    if (pageSize <= 0) throw new Error('pageSize must be positive');
    return Math.ceil(total / pageSize);
}

export function formatProb(p: number): string {
    return `${(p * 100).toFixed(1)}%`;
}
