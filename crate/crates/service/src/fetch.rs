//! Retrieval of remote audio into a local temporary file.

use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::time::Duration;

use futures_util::StreamExt;
use reqwest::header::CONTENT_TYPE;
use reqwest::Url;
use tempfile::NamedTempFile;
use tokio::io::AsyncWriteExt;

use ddmd_core::audio_io::supported_extension;

use crate::error::ApiError;

/// External command that downloads `{url}` into `{output}`, for sources
/// that do not serve audio directly. `{output}` ends in `.extension`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownloaderHook {
    pub template: String,
    pub extension: String,
}

impl DownloaderHook {
    pub const ENV: &'static str = "DDMD_DOWNLOADER";

    pub fn new(template: impl Into<String>, extension: impl Into<String>) -> Self {
        DownloaderHook { template: template.into(), extension: extension.into() }
    }

    /// Reads the template from `DDMD_DOWNLOADER`; output is assumed WAV.
    pub fn from_env() -> Option<Self> {
        let template = std::env::var(Self::ENV).ok()?;
        (!template.trim().is_empty()).then(|| DownloaderHook::new(template, "wav"))
    }

    fn argv(&self, url: &str, output: &Path) -> Vec<String> {
        let output = output.to_string_lossy();
        self.template.split_whitespace().map(|t| t.replace("{url}", url).replace("{output}", &output)).collect()
    }
}

/// A downloaded file and the extension that selects its decoder.
#[derive(Debug)]
pub struct Fetched {
    pub file: NamedTempFile,
    pub extension: String,
}

/// Parses and checks an absolute http(s) URL.
pub fn parse_url(raw: &str) -> Result<Url, ApiError> {
    let url = Url::parse(raw.trim()).map_err(|e| ApiError::bad_request(format!("invalid URL: {e}")))?;
    match url.scheme() {
        "http" | "https" => Ok(url),
        other => Err(ApiError::bad_request(format!("unsupported URL scheme {other:?}"))),
    }
}

fn extension_from_url(url: &Url) -> Option<String> {
    let last = url.path_segments()?.next_back()?;
    supported_extension(Path::new(last))
}

fn extension_from_content_type(content_type: &str) -> Option<&'static str> {
    let mime = content_type.split(';').next()?.trim().to_ascii_lowercase();
    Some(match mime.as_str() {
        "audio/wav" | "audio/wave" | "audio/x-wav" | "audio/vnd.wave" => "wav",
        "audio/mpeg" | "audio/mp3" => "mp3",
        "audio/mp4" | "video/mp4" | "audio/x-m4a" => "mp4",
        "audio/aac" | "audio/x-aac" => "aac",
        "audio/ogg" | "application/ogg" => "ogg",
        "audio/flac" | "audio/x-flac" => "flac",
        "audio/aiff" | "audio/x-aiff" => "aiff",
        _ => return None,
    })
}

fn temp_with_extension(ext: &str) -> Result<NamedTempFile, ApiError> {
    tempfile::Builder::new()
        .prefix("ddmd-")
        .suffix(&format!(".{ext}"))
        .tempfile()
        .map_err(|e| ApiError::internal(format!("creating temporary file: {e}")))
}

/// GET `url` into a temporary file. The declared length is checked before
/// the body is read, and the running total while it streams.
pub async fn fetch_direct(
    client: &reqwest::Client,
    url: &Url,
    max_bytes: u64,
    timeout: Duration,
) -> Result<Fetched, ApiError> {
    let resp = client
        .get(url.clone())
        .timeout(timeout)
        .send()
        .await
        .map_err(|e| ApiError::bad_gateway(format!("fetching {url}: {e}")))?;
    let status = resp.status();
    if !status.is_success() {
        return Err(ApiError::upstream(status.as_u16()));
    }
    if resp.content_length().is_some_and(|n| n > max_bytes) {
        return Err(ApiError::too_large(max_bytes));
    }
    let extension = match extension_from_url(url) {
        Some(ext) => ext,
        None => {
            let ct = resp.headers().get(CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or("");
            extension_from_content_type(ct)
                .map(str::to_owned)
                .ok_or_else(|| ApiError::unsupported(format!("cannot infer audio format of {url} ({ct:?})")))?
        }
    };

    let file = temp_with_extension(&extension)?;
    let std_file = file.reopen().map_err(|e| ApiError::internal(e.to_string()))?;
    let mut out = tokio::fs::File::from_std(std_file);
    let mut written = 0u64;
    let mut body = resp.bytes_stream();
    while let Some(chunk) = body.next().await {
        let chunk = chunk.map_err(|e| ApiError::bad_gateway(format!("reading {url}: {e}")))?;
        written += chunk.len() as u64;
        if written > max_bytes {
            return Err(ApiError::too_large(max_bytes));
        }
        out.write_all(&chunk).await.map_err(|e| ApiError::internal(e.to_string()))?;
    }
    out.flush().await.map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Fetched { file, extension })
}

/// Runs the downloader hook with a deadline and checks the output size.
pub async fn fetch_with_hook(
    hook: &DownloaderHook,
    url: &Url,
    max_bytes: u64,
    timeout: Duration,
) -> Result<Fetched, ApiError> {
    let file = temp_with_extension(&hook.extension)?;
    let output: PathBuf = file.path().to_path_buf();
    let argv = hook.argv(url.as_str(), &output);
    let (program, args) = argv.split_first().ok_or_else(|| ApiError::internal("empty downloader template"))?;
    let child = tokio::process::Command::new(program)
        .args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .kill_on_drop(true)
        .output();
    let result = tokio::time::timeout(timeout, child)
        .await
        .map_err(|_| ApiError::bad_gateway(format!("downloader timed out after {}s", timeout.as_secs_f64())))?
        .map_err(|e| ApiError::bad_gateway(format!("running downloader {program:?}: {e}")))?;
    if !result.status.success() {
        let stderr = String::from_utf8_lossy(&result.stderr);
        return Err(ApiError::bad_gateway(format!("downloader failed ({}): {}", result.status, stderr.trim())));
    }
    let size = tokio::fs::metadata(&output)
        .await
        .map_err(|e| ApiError::bad_gateway(format!("downloader produced no output: {e}")))?
        .len();
    if size > max_bytes {
        return Err(ApiError::too_large(max_bytes));
    }
    Ok(Fetched { file, extension: hook.extension.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_checks() {
        assert!(parse_url("https://example.org/a.wav").is_ok());
        assert_eq!(parse_url("ftp://example.org/a.wav").unwrap_err().status, 400);
        assert_eq!(parse_url("not a url").unwrap_err().status, 400);
    }

    #[test]
    fn extension_inference() {
        let url = Url::parse("http://h/x/Track.WAV?dl=1").unwrap();
        assert_eq!(extension_from_url(&url).as_deref(), Some("wav"));
        assert_eq!(extension_from_url(&Url::parse("http://h/stream").unwrap()), None);
        assert_eq!(extension_from_content_type("audio/x-wav; charset=binary"), Some("wav"));
        assert_eq!(extension_from_content_type("text/html"), None);
    }

    #[test]
    fn hook_substitution() {
        let hook = DownloaderHook::new("dl --out {output} {url}", "wav");
        assert_eq!(hook.argv("http://h/v", Path::new("/tmp/o.wav")), ["dl", "--out", "/tmp/o.wav", "http://h/v"]);
    }
}
