export type FinalClass = 'NORMAL' | 'COVID' | 'NON_COVID_PNEUMONIA';

export interface StageResult {
    prob: number;
    decision: boolean;
    threshold: number;
}

export interface ScreeningRecord {
    id: number;
    final_class: FinalClass;
    created: string | null;
    flags: string[];
    model_versions: Record<string, string>;
    stage2: StageResult;
    stage3: StageResult | null;
    heatmaps: Record<string, string>;
    image: string | null;
}

export interface ScreeningList {
    items: ScreeningRecord[];
    total: number;
    page: number;
    page_size: number;
}

export interface HistoryFilters {
    finalClass?: FinalClass;
    from?: string;
    to?: string;
    page?: number;
    pageSize?: number;
}

export type PanelName = 'original' | 'stage2_cam' | 'stage3_gradcam' | 'guided';
