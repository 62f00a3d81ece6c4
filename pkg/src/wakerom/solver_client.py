"""HTTP client for an external full-order solver service."""
import logging

import httpx

logger = logging.getLogger("wakerom.solver_client")

RETRY_STATUS = {502, 503, 504}


class SolverClient:
    """Posts inlet distributions to a solver endpoint, retrying once on transient failures."""

    def __init__(self, http_client: httpx.Client, token: str | None = None):
        self.http = http_client
        self.token = token

    @classmethod
    def connect(cls, base_url: str, token: str | None = None, timeout: float = 60.0) -> "SolverClient":
        http_client = httpx.Client(
            base_url=base_url,
            timeout=httpx.Timeout(timeout, connect=10.0),
        )
        return cls(http_client, token)

    def _headers(self) -> dict[str, str]:
        if self.token:
            return {"Authorization": f"Bearer {self.token}"}
        return {}

    def post(self, path: str, json: dict) -> httpx.Response:
        """Send POST request, retrying once on 5xx gateway errors or transport failures."""
        try:
            response = self.http.post(path, json=json, headers=self._headers())
        except httpx.TransportError as e:
            logger.info(f"Transport error ({e}), retrying")
            return self.http.post(path, json=json, headers=self._headers())
        if response.status_code in RETRY_STATUS:
            logger.info(f"Got {response.status_code}, retrying")
            response = self.http.post(path, json=json, headers=self._headers())
        return response

    def describe(self) -> str:
        return str(self.http.base_url)

    def close(self) -> None:
        self.http.close()


def extract_error(response: httpx.Response) -> str:
    """Extract error detail from a solver response."""
    content_type = response.headers.get("content-type", "")
    if content_type.startswith("application/json"):
        detail = response.json().get("detail", response.text)
    else:
        detail = response.text
    return f"Error ({response.status_code}): {detail}"
