//! `xxd`-style hex dump.
//!
//! ```text
//! 00000000: 9101 3655 0467 6174 656b 6565 7065 722e  ..6U.gatekeeper.
//! ```
//!
//! Each line is an 8-digit hex offset, a colon, sixteen bytes in two-byte
//! groups, two spaces and the printable-ASCII column (`.` for the rest).

use std::fmt::Write;

const BYTES_PER_LINE: usize = 16;

pub fn hexdump(bytes: &[u8]) -> String {
    let mut out = String::new();
    for (line, chunk) in bytes.chunks(BYTES_PER_LINE).enumerate() {
        let _ = write!(out, "{:08x}:", line * BYTES_PER_LINE);
        for i in 0..BYTES_PER_LINE {
            if i % 2 == 0 {
                out.push(' ');
            }
            match chunk.get(i) {
                Some(b) => {
                    let _ = write!(out, "{b:02x}");
                }
                None => out.push_str("  "),
            }
        }
        out.push_str("  ");
        out.extend(chunk.iter().map(|&b| {
            if b.is_ascii_graphic() || b == b' ' {
                b as char
            } else {
                '.'
            }
        }));
        out.push('\n');
    }
    out
}
