//! Minimal PNG encode/decode for synthetic probe images.
//!
//! The simulator emits a 1x1 truecolor PNG whose `tEXt` chunk carries the
//! drawn label, so image probes round-trip losslessly without any image
//! dependency. The encoder writes a stored (uncompressed) zlib block, which
//! every PNG reader accepts.

const SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];

/// Encodes a 1x1 RGB image with one `tEXt` chunk `keyword\0text`.
pub fn encode_labeled_png(rgb: [u8; 3], keyword: &str, text: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(96 + keyword.len() + text.len());
    out.extend_from_slice(&SIGNATURE);

    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend_from_slice(&1u32.to_be_bytes());
    ihdr.extend_from_slice(&1u32.to_be_bytes());
    // bit depth 8, color type 2 (truecolor), default compression/filter,
    // no interlace
    ihdr.extend_from_slice(&[8, 2, 0, 0, 0]);
    push_chunk(&mut out, b"IHDR", &ihdr);

    let mut textual = Vec::with_capacity(keyword.len() + 1 + text.len());
    textual.extend_from_slice(keyword.as_bytes());
    textual.push(0);
    textual.extend_from_slice(text.as_bytes());
    push_chunk(&mut out, b"tEXt", &textual);

    // One scanline: filter byte 0 then the pixel.
    let raw = [0, rgb[0], rgb[1], rgb[2]];
    push_chunk(&mut out, b"IDAT", &zlib_stored(&raw));

    push_chunk(&mut out, b"IEND", &[]);
    out
}

/// Reads the text of the first `tEXt` chunk with the given keyword.
pub fn read_text_chunk(bytes: &[u8], keyword: &str) -> Option<String> {
    if bytes.len() < SIGNATURE.len() || bytes[..SIGNATURE.len()] != SIGNATURE {
        return None;
    }
    let mut pos = SIGNATURE.len();
    while pos + 8 <= bytes.len() {
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().ok()?) as usize;
        let kind = &bytes[pos + 4..pos + 8];
        let data_start = pos + 8;
        let data_end = data_start.checked_add(len)?;
        if data_end + 4 > bytes.len() {
            return None;
        }
        let data = &bytes[data_start..data_end];
        if kind == b"tEXt" {
            if let Some(sep) = data.iter().position(|b| *b == 0) {
                if &data[..sep] == keyword.as_bytes() {
                    return String::from_utf8(data[sep + 1..].to_vec()).ok();
                }
            }
        }
        if kind == b"IEND" {
            return None;
        }
        pos = data_end + 4;
    }
    None
}

fn push_chunk(out: &mut Vec<u8>, kind: &[u8; 4], data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    out.extend_from_slice(kind);
    out.extend_from_slice(data);
    let mut crc_input = Vec::with_capacity(4 + data.len());
    crc_input.extend_from_slice(kind);
    crc_input.extend_from_slice(data);
    out.extend_from_slice(&crc32(&crc_input).to_be_bytes());
}

/// Zlib stream holding one stored deflate block.
fn zlib_stored(raw: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(raw.len() + 11);
    out.extend_from_slice(&[0x78, 0x01]);
    let len = raw.len() as u16;
    out.push(0x01); // final stored block
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&(!len).to_le_bytes());
    out.extend_from_slice(raw);
    out.extend_from_slice(&adler32(raw).to_be_bytes());
    out
}

fn adler32(data: &[u8]) -> u32 {
    const MOD: u32 = 65_521;
    let mut a: u32 = 1;
    let mut b: u32 = 0;
    for byte in data {
        a = (a + *byte as u32) % MOD;
        b = (b + a) % MOD;
    }
    (b << 16) | a
}

pub(crate) fn crc32(data: &[u8]) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for byte in data {
        crc ^= *byte as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip_through_the_text_chunk() {
        let png = encode_labeled_png([10, 20, 30], "label", "female");
        assert_eq!(read_text_chunk(&png, "label").as_deref(), Some("female"));
        assert_eq!(read_text_chunk(&png, "other"), None);
    }

    #[test]
    fn encoded_files_carry_the_png_signature_and_end_chunk() {
        let png = encode_labeled_png([0, 0, 0], "label", "NA");
        assert_eq!(&png[..8], &SIGNATURE);
        assert_eq!(&png[png.len() - 8..png.len() - 4], b"IEND");
    }

    #[test]
    fn truncated_or_foreign_bytes_read_as_nothing() {
        assert_eq!(read_text_chunk(b"not a png", "label"), None);
        let png = encode_labeled_png([1, 2, 3], "label", "male");
        assert_eq!(read_text_chunk(&png[..12], "label"), None);
    }

    #[test]
    fn crc32_matches_the_reference_vector() {
        // Published check value for ASCII "123456789".
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn adler32_matches_the_reference_vector() {
        // Published check value for ASCII "Wikipedia".
        assert_eq!(adler32(b"Wikipedia"), 0x11E6_0398);
    }
}
