import { HistoryFilters, ScreeningList, ScreeningRecord } from './types.js';

export class ApiError extends Error {
    constructor(
        public status: number,
        public code: string,
    ) {
        super(`${status}: ${code}`);
    }
}

type FetchLike = typeof fetch;

/** Thin client over the screening service; every view reads from here. */
export class ScreeningApi {
    constructor(
        private baseUrl: string = '',
        private fetchFn: FetchLike = fetch.bind(globalThis),
    ) {}

    private async parseError(response: Response): Promise<never> {
        let code = 'unknown_error';
        try {
            const body = await response.json();
            if (typeof body.error === 'string') code = body.error;
        } catch {
            /* non-JSON error body */
        }
        throw new ApiError(response.status, code);
    }

    async health(): Promise<boolean> {
        try {
            const r = await this.fetchFn(`${this.baseUrl}/healthz`);
            return r.ok;
        } catch {
            return false;
        }
    }

    async upload(file: Blob, filename = 'upload.png'): Promise<ScreeningRecord> {
        const form = new FormData();
        form.append('file', file, filename);
        const r = await this.fetchFn(`${this.baseUrl}/v1/screenings`, {
            method: 'POST',
            body: form,
        });
        if (r.status !== 201) return this.parseError(r);
        return (await r.json()) as ScreeningRecord;
    }

    async get(id: number): Promise<ScreeningRecord> {
        const r = await this.fetchFn(`${this.baseUrl}/v1/screenings/${id}`);
        if (!r.ok) return this.parseError(r);
        return (await r.json()) as ScreeningRecord;
    }

    historyQuery(filters: HistoryFilters): string {
        const params = new URLSearchParams();
        if (filters.finalClass) params.set('final_class', filters.finalClass);
        if (filters.from) params.set('from', filters.from);
        if (filters.to) params.set('to', filters.to);
        params.set('page', String(filters.page ?? 1));
        params.set('page_size', String(filters.pageSize ?? 20));
        return params.toString();
    }

    async list(filters: HistoryFilters = {}): Promise<ScreeningList> {
        const r = await this.fetchFn(`${this.baseUrl}/v1/screenings?${this.historyQuery(filters)}`);
        if (!r.ok) return this.parseError(r);
        return (await r.json()) as ScreeningList;
    }

    /** Raw PNG bytes; cached by the caller so sliders never refetch. */
    async imageBytes(url: string): Promise<Uint8Array> {
        const r = await this.fetchFn(`${this.baseUrl}${url}`);
        if (!r.ok) return this.parseError(r);
        return new Uint8Array(await r.arrayBuffer());
    }
}
