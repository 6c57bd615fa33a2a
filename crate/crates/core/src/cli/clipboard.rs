//! Clipboard access with timed clearing.
//!
//! `AUTOPASS_CLIPBOARD_FILE` swaps the system clipboard for a plain file,
//! for headless machines and tests.

use std::path::PathBuf;
use std::time::Duration;

use zeroize::Zeroizing;

use crate::error::{Error, Result};
use crate::fsutil;

pub const FILE_BACKEND_ENV: &str = "AUTOPASS_CLIPBOARD_FILE";

pub trait Clipboard {
    fn set(&mut self, text: &str) -> Result<()>;
    fn get(&mut self) -> Result<Option<Zeroizing<String>>>;
    fn clear(&mut self) -> Result<()>;
}

pub struct FileClipboard {
    path: PathBuf,
}

impl FileClipboard {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileClipboard { path: path.into() }
    }
}

impl Clipboard for FileClipboard {
    fn set(&mut self, text: &str) -> Result<()> {
        fsutil::write_private(&self.path, text.as_bytes())
    }

    fn get(&mut self) -> Result<Option<Zeroizing<String>>> {
        match std::fs::read_to_string(&self.path) {
            Ok(text) => Ok(Some(Zeroizing::new(text))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn clear(&mut self) -> Result<()> {
        fsutil::write_private(&self.path, b"")
    }
}

struct SystemClipboard(arboard::Clipboard);

fn clip_err(e: arboard::Error) -> Error {
    Error::Io(std::io::Error::other(format!("clipboard: {e}")))
}

impl Clipboard for SystemClipboard {
    fn set(&mut self, text: &str) -> Result<()> {
        self.0.set_text(text).map_err(clip_err)
    }

    fn get(&mut self) -> Result<Option<Zeroizing<String>>> {
        match self.0.get_text() {
            Ok(text) => Ok(Some(Zeroizing::new(text))),
            Err(arboard::Error::ContentNotAvailable) => Ok(None),
            Err(e) => Err(clip_err(e)),
        }
    }

    fn clear(&mut self) -> Result<()> {
        self.0.clear().map_err(clip_err)
    }
}

pub fn open() -> Result<Box<dyn Clipboard>> {
    if let Some(path) = std::env::var_os(FILE_BACKEND_ENV).filter(|p| !p.is_empty()) {
        return Ok(Box::new(FileClipboard::new(path)));
    }
    let inner = arboard::Clipboard::new()
        .map_err(|e| Error::Io(std::io::Error::other(format!("clipboard unavailable ({e}); use --stdout"))))?;
    Ok(Box::new(SystemClipboard(inner)))
}

/// Copies `text`, waits, then clears the clipboard unless something else
/// has been copied in the meantime.
pub fn copy_and_clear(clipboard: &mut dyn Clipboard, text: &str, wait: Duration) -> Result<()> {
    clipboard.set(text)?;
    std::thread::sleep(wait);
    let current = clipboard.get()?;
    if current.as_deref().map(String::as_str) == Some(text) {
        clipboard.clear()?;
    } else {
        log::info!("clipboard changed since copy; leaving it alone");
    }
    Ok(())
}
