// Typed client for the pool service HTTP/JSON API. Every state-changing UI
// interaction maps to exactly one of these calls; the service is the source
// of truth and no line text is ever invented or edited client-side.
export class ApiError extends Error {
    constructor(status, code, detail) {
        super(detail);
        this.status = status;
        this.code = code;
        this.name = "ApiError";
    }
}
async function parseError(response) {
    let code = "HttpError";
    let detail = response.statusText;
    try {
        const body = await response.json();
        if (typeof body.error === "string")
            code = body.error;
        if (typeof body.detail === "string")
            detail = body.detail;
    }
    catch {
        // non-JSON error body; keep the status text
    }
    return new ApiError(response.status, code, detail);
}
export class ApiClient {
    constructor(base = "") {
        this.base = base;
    }
    async request(path, init) {
        const response = await fetch(this.base + path, {
            headers: { "Content-Type": "application/json" },
            ...init,
        });
        if (!response.ok)
            throw await parseError(response);
        return (await response.json());
    }
    createSession(body = {}) {
        return this.request("/sessions", { method: "POST", body: JSON.stringify(body) });
    }
    getSession(id) {
        return this.request(`/sessions/${id}`);
    }
    generatePool(id, body) {
        return this.request(`/sessions/${id}/pool`, { method: "POST", body: JSON.stringify(body) });
    }
    pin(id, lineId) {
        return this.request(`/sessions/${id}/pin`, { method: "POST", body: JSON.stringify({ line_id: lineId }) });
    }
    unpin(id, lineId) {
        return this.request(`/sessions/${id}/unpin`, { method: "POST", body: JSON.stringify({ line_id: lineId }) });
    }
    putArrangement(id, lineIds) {
        return this.request(`/sessions/${id}/arrangement`, {
            method: "PUT",
            body: JSON.stringify({ line_ids: lineIds }),
        });
    }
    vary(id, body) {
        return this.request(`/sessions/${id}/vary`, { method: "POST", body: JSON.stringify(body) });
    }
    async exportText(id) {
        const response = await fetch(`${this.base}/sessions/${id}/export?format=text`);
        if (!response.ok)
            throw await parseError(response);
        return response.text();
    }
    exportJsonUrl(id) {
        return `${this.base}/sessions/${id}/export?format=json`;
    }
}
