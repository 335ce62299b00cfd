import { ApiError, ScreeningApi } from './api.js';
import { compositeOverlay, grayToRgba } from './overlay.js';
import { FinalClass, HistoryFilters, PanelName, ScreeningRecord } from './types.js';
import { PANEL_TITLES, ScreeningView, formatProb, pageCount, toScreeningView } from './view.js';

const api = new ScreeningApi('');

interface GrayImage {
    width: number;
    height: number;
    gray: Uint8ClampedArray;
}

async function decodeGray(bytes: Uint8Array): Promise<GrayImage> {
    const bitmap = await createImageBitmap(new Blob([bytes.buffer as ArrayBuffer], { type: 'image/png' }));
    const canvas = document.createElement('canvas');
    canvas.width = bitmap.width;
    canvas.height = bitmap.height;
    const ctx = canvas.getContext('2d')!;
    ctx.drawImage(bitmap, 0, 0);
    const data = ctx.getImageData(0, 0, bitmap.width, bitmap.height).data;
    const gray = new Uint8ClampedArray(bitmap.width * bitmap.height);
    for (let i = 0; i < gray.length; i++) gray[i] = data[4 * i];
    return { width: bitmap.width, height: bitmap.height, gray };
}

function el<T extends HTMLElement>(id: string): T {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
}

class Viewer {
    private cache = new Map<PanelName, GrayImage>();
    private view: ScreeningView | null = null;
    private alpha = 0.45;

    constructor(slider: HTMLInputElement) {
        slider.addEventListener('input', () => {
            this.alpha = Number(slider.value) / 100;
            this.renderPanels();
        });
    }

    async show(record: ScreeningRecord): Promise<void> {
        this.view = toScreeningView(record);
        this.cache.clear();
        const view = this.view;
        el('result-badge').textContent = view.badge.label;
        el('result-badge').className = `badge badge-${view.badge.tone}`;
        el('result-id').textContent = `screening #${view.id}`;
        el('result-flags').textContent = view.flags.length ? `flags: ${view.flags.join(', ')}` : '';
        renderProbBars(view);

        // fetch the byte payloads once; the opacity slider only re-renders
        await Promise.all(
            view.panels.map(async (name) => {
                const url = view.panelUrls[name];
                if (!url) return;
                this.cache.set(name, await decodeGray(await api.imageBytes(url)));
            }),
        );
        this.renderPanels();
        el('result-section').hidden = false;
    }

    private renderPanels(): void {
        if (!this.view) return;
        const grid = el('panel-grid');
        grid.innerHTML = '';
        for (const name of this.view.panels) {
            const img = this.cache.get(name);
            const cell = document.createElement('figure');
            cell.className = 'panel';
            const caption = document.createElement('figcaption');
            caption.textContent = PANEL_TITLES[name];
            const canvas = document.createElement('canvas');
            if (img) {
                canvas.width = img.width;
                canvas.height = img.height;
                const base = this.cache.get('original');
                let rgba: Uint8ClampedArray<ArrayBuffer>;
                if ((name === 'stage2_cam' || name === 'stage3_gradcam') && base) {
                    rgba = compositeOverlay(base.gray, img.gray, this.alpha);
                } else {
                    rgba = grayToRgba(img.gray);
                }
                canvas.getContext('2d')!.putImageData(
                    new ImageData(rgba, img.width, img.height), 0, 0);
            }
            cell.append(canvas, caption);
            grid.append(cell);
        }
    }
}

function renderProbBars(view: ScreeningView): void {
    const bars = el('prob-bars');
    bars.innerHTML = '';
    const rows: Array<[string, number | null]> = [
        ['Stage 2 - pneumonia', view.stage2Prob],
        ['Stage 3 - COVID-19', view.stage3Prob],
    ];
    for (const [label, prob] of rows) {
        if (prob === null) continue;
        const row = document.createElement('div');
        row.className = 'prob-row';
        row.innerHTML =
            `<span class="prob-label">${label}</span>` +
            `<span class="prob-track"><span class="prob-fill" style="width:${prob * 100}%"></span></span>` +
            `<span class="prob-value">${formatProb(prob)}</span>`;
        bars.append(row);
    }
}

function showError(message: string, retriable = false, retry?: () => void): void {
    const banner = el('error-banner');
    banner.hidden = false;
    banner.innerHTML = '';
    banner.append(message);
    if (retriable && retry) {
        const button = document.createElement('button');
        button.textContent = 'Retry';
        button.addEventListener('click', () => {
            banner.hidden = true;
            retry();
        });
        banner.append(' ', button);
    }
}

function clearError(): void {
    el('error-banner').hidden = true;
}

class History {
    filters: HistoryFilters = { page: 1, pageSize: 20 };
    total = 0;

    constructor(private onOpen: (id: number) => void) {}

    async reload(): Promise<void> {
        const listing = await api.list(this.filters);
        this.total = listing.total;
        const tbody = el('history-body');
        tbody.innerHTML = '';
        if (!listing.items.length) {
            el('history-empty').hidden = false;
            el('history-pager').hidden = true;
            return;
        }
        el('history-empty').hidden = true;
        el('history-pager').hidden = false;
        for (const item of listing.items) {
            const view = toScreeningView(item);
            const row = document.createElement('tr');
            row.innerHTML =
                `<td>#${item.id}</td>` +
                `<td>${item.created ? new Date(item.created).toLocaleString() : ''}</td>` +
                `<td><span class="badge badge-${view.badge.tone}">${view.badge.label}</span></td>` +
                `<td>${formatProb(item.stage2.prob)}</td>` +
                `<td>${item.stage3 ? formatProb(item.stage3.prob) : '-'}</td>`;
            row.addEventListener('click', () => this.onOpen(item.id));
            tbody.append(row);
        }
        const pages = Math.max(1, pageCount(this.total, this.filters.pageSize ?? 20));
        el('page-label').textContent = `page ${this.filters.page} of ${pages}`;
        (el('page-prev') as HTMLButtonElement).disabled = (this.filters.page ?? 1) <= 1;
        (el('page-next') as HTMLButtonElement).disabled = (this.filters.page ?? 1) >= pages;
    }
}

async function main(): Promise<void> {
    const viewer = new Viewer(el<HTMLInputElement>('opacity-slider'));
    const history = new History(async (id) => {
        clearError();
        viewer.show(await api.get(id)).catch(() => showError('failed to load screening'));
    });

    const fileInput = el<HTMLInputElement>('file-input');
    const uploadButton = el<HTMLButtonElement>('upload-button');
    const progress = el('upload-progress');

    async function doUpload(): Promise<void> {
        const file = fileInput.files?.[0];
        if (!file) {
            showError('choose a PNG or JPEG chest x-ray first');
            return;
        }
        clearError();
        uploadButton.disabled = true;
        progress.hidden = false;
        try {
            const record = await api.upload(file, file.name);
            await viewer.show(record);
            await history.reload();
        } catch (err) {
            if (err instanceof ApiError && err.status === 422) {
                showError('invalid image - the service rejected this upload');
            } else {
                showError('network failure - the screening service is unreachable', true, doUpload);
            }
        } finally {
            uploadButton.disabled = false;
            progress.hidden = true;
        }
    }

    uploadButton.addEventListener('click', doUpload);

    el<HTMLSelectElement>('filter-class').addEventListener('change', (e) => {
        const value = (e.target as HTMLSelectElement).value;
        history.filters.finalClass = (value || undefined) as FinalClass | undefined;
        history.filters.page = 1;
        history.reload().catch(() => showError('failed to load history'));
    });
    for (const [id, key] of [['filter-from', 'from'], ['filter-to', 'to']] as const) {
        el<HTMLInputElement>(id).addEventListener('change', (e) => {
            const value = (e.target as HTMLInputElement).value;
            history.filters[key] = value || undefined;
            history.filters.page = 1;
            history.reload().catch(() => showError('failed to load history'));
        });
    }
    el('page-prev').addEventListener('click', () => {
        history.filters.page = Math.max(1, (history.filters.page ?? 1) - 1);
        history.reload();
    });
    el('page-next').addEventListener('click', () => {
        history.filters.page = (history.filters.page ?? 1) + 1;
        history.reload();
    });

    const healthy = await api.health();
    el('health-dot').className = healthy ? 'dot dot-ok' : 'dot dot-bad';
    el('health-text').textContent = healthy ? 'service ready' : 'service unavailable';
    history.reload().catch(() => showError('failed to load history'));
}

main().catch((err) => {
    console.error(err);
    showError('failed to initialize');
});
