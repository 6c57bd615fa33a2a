//! Secret entry. A terminal gets a no-echo prompt; anything else is read
//! one line per secret so scripts and tests can pipe input.

use std::io::{BufRead, IsTerminal};

use zeroize::Zeroizing;

use crate::derivation::UserPassword;
use crate::error::{Error, Result};

pub struct Prompter {
    tty: bool,
    lines: Option<Box<dyn BufRead>>,
}

impl Prompter {
    pub fn from_stdin() -> Self {
        let tty = std::io::stdin().is_terminal();
        Prompter { tty, lines: None }
    }

    /// Reads secrets from `reader` instead of stdin.
    pub fn from_reader(reader: impl BufRead + 'static) -> Self {
        Prompter { tty: false, lines: Some(Box::new(reader)) }
    }

    fn read_line(&mut self) -> Result<Zeroizing<String>> {
        let mut line = Zeroizing::new(String::new());
        let n = match &mut self.lines {
            Some(reader) => reader.read_line(&mut line)?,
            None => std::io::stdin().lock().read_line(&mut line)?,
        };
        if n == 0 {
            return Err(Error::InvalidParameter("unexpected end of input while reading a secret".into()));
        }
        let trimmed = line.trim_end_matches(['\r', '\n']).len();
        line.truncate(trimmed);
        Ok(line)
    }

    pub fn secret(&mut self, prompt: &str) -> Result<Zeroizing<String>> {
        if self.tty {
            Ok(Zeroizing::new(rpassword::prompt_password(prompt)?))
        } else {
            self.read_line()
        }
    }

    /// Asks twice on a terminal; piped input is read once.
    pub fn new_secret(&mut self, prompt: &str, confirm: &str) -> Result<Zeroizing<String>> {
        let first = self.secret(prompt)?;
        if self.tty {
            let second = self.secret(confirm)?;
            if *first != *second {
                return Err(Error::InvalidParameter("entries do not match".into()));
            }
        }
        Ok(first)
    }

    pub fn password(&mut self, prompt: &str) -> Result<UserPassword> {
        UserPassword::new(self.secret(prompt)?.as_str())
    }

    pub fn new_password(&mut self, prompt: &str, confirm: &str) -> Result<UserPassword> {
        UserPassword::new(self.new_secret(prompt, confirm)?.as_str())
    }
}
