// The only thing the client persists is the session token; everything
// else is recoverable from the server on resume.

const TOKEN_KEY = "mosui.session-token";

export function saveToken(token: string): void {
  window.localStorage.setItem(TOKEN_KEY, token);
}

export function loadToken(): string | null {
  return window.localStorage.getItem(TOKEN_KEY);
}

export function clearToken(): void {
  window.localStorage.removeItem(TOKEN_KEY);
}
