import { ScreeningRecord } from '../src/types.js';

export const normalRecord: ScreeningRecord = {
    id: 1,
    final_class: 'NORMAL',
    created: '2026-08-01T10:00:00+00:00',
    flags: [],
    model_versions: { stage1: 'stage1-aaa', stage2: 'stage2-bbb', stage3: 'stage3-ccc' },
    stage2: { prob: 0.112233, decision: false, threshold: 0.5 },
    stage3: null,
    heatmaps: { stage2_cam: '/v1/screenings/1/heatmaps/stage2_cam' },
    image: '/v1/screenings/1/image',
};

export const covidRecord: ScreeningRecord = {
    id: 2,
    final_class: 'COVID',
    created: '2026-08-01T11:00:00+00:00',
    flags: ['empty_mask'],
    model_versions: { stage1: 'stage1-aaa', stage2: 'stage2-bbb', stage3: 'stage3-ccc' },
    stage2: { prob: 0.91, decision: true, threshold: 0.5 },
    stage3: { prob: 0.77, decision: true, threshold: 0.5 },
    heatmaps: {
        stage2_cam: '/v1/screenings/2/heatmaps/stage2_cam',
        stage3_gradcam: '/v1/screenings/2/heatmaps/stage3_gradcam',
        guided: '/v1/screenings/2/heatmaps/guided',
    },
    image: '/v1/screenings/2/image',
};

export const pneumoniaRecord: ScreeningRecord = {
    ...covidRecord,
    id: 3,
    final_class: 'NON_COVID_PNEUMONIA',
    stage3: { prob: 0.21, decision: false, threshold: 0.5 },
};
