use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::{ChannelAdapter, ChannelError, ChannelMessage, MessageId};
use crate::clock::Clock;

/// Line-oriented terminal channel: operator lines in, `[BOT] ...` lines out.
pub struct ConsoleAdapter {
    lines: Mutex<Receiver<String>>,
    out: Mutex<Box<dyn Write + Send>>,
    eof: Arc<AtomicBool>,
    /// Lines read but not yet handed out.
    queued: Arc<AtomicUsize>,
    clock: Arc<dyn Clock>,
    posted: Mutex<u64>,
}

impl ConsoleAdapter {
    pub fn new(
        input: impl BufRead + Send + 'static,
        output: impl Write + Send + 'static,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        let eof = Arc::new(AtomicBool::new(false));
        let flag = eof.clone();
        let queued = Arc::new(AtomicUsize::new(0));
        let count = queued.clone();
        thread::Builder::new()
            .name("console-input".into())
            .spawn(move || {
                for line in input.lines() {
                    let Ok(line) = line else { break };
                    count.fetch_add(1, Ordering::AcqRel);
                    if tx.send(line).is_err() {
                        return;
                    }
                }
                flag.store(true, Ordering::Release);
            })
            .expect("spawn console reader");
        ConsoleAdapter {
            lines: Mutex::new(rx),
            out: Mutex::new(Box::new(output)),
            eof,
            queued,
            clock,
            posted: Mutex::new(0),
        }
    }

    pub fn stdio(clock: Arc<dyn Clock>) -> Self {
        Self::new(std::io::BufReader::new(std::io::stdin()), std::io::stdout(), clock)
    }
}

/// `[BOT] <text>` plus the attachment path when there is one.
pub fn render_post(msg: &ChannelMessage) -> String {
    match &msg.attachment {
        Some(p) => format!("[BOT] {} (attachment: {})", msg.text, p.display()),
        None => format!("[BOT] {}", msg.text),
    }
}

impl ChannelAdapter for ConsoleAdapter {
    fn post(&self, msg: &ChannelMessage) -> Result<MessageId, ChannelError> {
        let mut out = self.out.lock().unwrap();
        writeln!(out, "{}", render_post(msg))
            .and_then(|_| out.flush())
            .map_err(|e| ChannelError::SendFailed(e.to_string()))?;
        let mut n = self.posted.lock().unwrap();
        *n += 1;
        Ok(MessageId(format!("console-{n}")))
    }

    fn recv_inbound(&self, timeout: Duration) -> Option<ChannelMessage> {
        let rx = self.lines.lock().unwrap();
        loop {
            let got = rx.recv_timeout(timeout);
            if got.is_ok() {
                self.queued.fetch_sub(1, Ordering::AcqRel);
            }
            match got {
                Ok(line) if line.trim().is_empty() => continue,
                Ok(line) => {
                    let mut msg = ChannelMessage::text("console", line.trim(), self.clock.now());
                    msg.user = Some("operator".into());
                    return Some(msg);
                }
                Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                    return None
                }
            }
        }
    }

    fn descriptor(&self) -> String {
        "console".into()
    }

    fn is_closed(&self) -> bool {
        self.eof.load(Ordering::Acquire) && self.queued.load(Ordering::Acquire) == 0
    }
}
