//! Baseline sequential JPEG encoder: JFIF YCbCr, 4:2:0 chroma subsampling,
//! the Annex K quantization and Huffman tables, IJG quality scaling.
//!
//! Decoding goes through the `image` crate.

use crate::error::{Error, Result};

#[rustfmt::skip]
const LUMA_QTABLE: [u16; 64] = [
    16, 11, 10, 16,  24,  40,  51,  61,
    12, 12, 14, 19,  26,  58,  60,  55,
    14, 13, 16, 24,  40,  57,  69,  56,
    14, 17, 22, 29,  51,  87,  80,  62,
    18, 22, 37, 56,  68, 109, 103,  77,
    24, 35, 55, 64,  81, 104, 113,  92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103,  99,
];

#[rustfmt::skip]
const CHROMA_QTABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Natural (row-major) index of the k-th coefficient in zigzag order.
#[rustfmt::skip]
const ZIGZAG: [usize; 64] = [
     0,  1,  8, 16,  9,  2,  3, 10,
    17, 24, 32, 25, 18, 11,  4,  5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13,  6,  7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63,
];

const DC_LUMA_BITS: [u8; 16] = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
const DC_CHROMA_BITS: [u8; 16] = [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
const DC_VALUES: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

const AC_LUMA_BITS: [u8; 16] = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d];
#[rustfmt::skip]
const AC_LUMA_VALUES: [u8; 162] = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7,
    0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5,
    0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2,
    0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa,
];

const AC_CHROMA_BITS: [u8; 16] = [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77];
#[rustfmt::skip]
const AC_CHROMA_VALUES: [u8; 162] = [
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
    0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0,
    0x15, 0x62, 0x72, 0xd1, 0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26,
    0x27, 0x28, 0x29, 0x2a, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
    0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
    0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5,
    0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3,
    0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda,
    0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa,
];

/// Code and length per symbol, built canonically from the bit-count list.
struct HuffTable {
    code: [u16; 256],
    len: [u8; 256],
}

impl HuffTable {
    fn new(bits: &[u8; 16], values: &[u8]) -> Self {
        let mut t = HuffTable { code: [0; 256], len: [0; 256] };
        let mut code: u16 = 0;
        let mut k = 0;
        for (i, &count) in bits.iter().enumerate() {
            for _ in 0..count {
                t.code[values[k] as usize] = code;
                t.len[values[k] as usize] = (i + 1) as u8;
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        t
    }
}

/// IJG scaling of a base table for `quality` in 1..=100.
pub fn scaled_qtable(base: &[u16; 64], quality: u8) -> [u16; 64] {
    let q = u32::from(quality.clamp(1, 100));
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0u16; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as u16;
    }
    out
}

struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    nbits: u32,
}

impl BitWriter {
    fn put(&mut self, code: u32, len: u32) {
        debug_assert!(len <= 16);
        self.acc = (self.acc << len) | (code & ((1 << len) - 1));
        self.nbits += len;
        while self.nbits >= 8 {
            let byte = (self.acc >> (self.nbits - 8)) as u8;
            self.out.push(byte);
            if byte == 0xff {
                self.out.push(0);
            }
            self.nbits -= 8;
        }
        self.acc &= (1 << self.nbits) - 1;
    }

    fn flush(&mut self) {
        if self.nbits > 0 {
            let pad = 8 - self.nbits;
            self.put((1 << pad) - 1, pad);
        }
    }
}

fn segment(out: &mut Vec<u8>, marker: u8, body: &[u8]) {
    out.extend_from_slice(&[0xff, marker]);
    out.extend_from_slice(&((body.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(body);
}

/// `cos((2x+1) u pi / 16)` scaled by the DCT normalization `C(u) / 2`.
fn dct_basis() -> [[f32; 8]; 8] {
    let mut b = [[0f32; 8]; 8];
    for (u, row) in b.iter_mut().enumerate() {
        let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
        for (x, v) in row.iter_mut().enumerate() {
            *v = (cu / 2.0 * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos()) as f32;
        }
    }
    b
}

fn fdct(block: &[f32; 64], basis: &[[f32; 8]; 8]) -> [f32; 64] {
    let mut tmp = [0f32; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| basis[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0f32; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| basis[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn magnitude_bits(v: i32) -> (u32, u32) {
    let size = 32 - v.unsigned_abs().leading_zeros();
    let bits = if v < 0 { (v - 1) as u32 & ((1 << size) - 1) } else { v as u32 };
    (size, bits)
}

struct Encoder<'a> {
    w: BitWriter,
    basis: [[f32; 8]; 8],
    tables: [(&'a [u16; 64], HuffTable, HuffTable); 2],
}

impl Encoder<'_> {
    fn block(&mut self, samples: &[f32; 64], table: usize, pred: &mut i32) {
        let coeffs = fdct(samples, &self.basis);
        let (q, dc, ac) = &self.tables[table];
        let mut zz = [0i32; 64];
        for (k, &n) in ZIGZAG.iter().enumerate() {
            zz[k] = (coeffs[n] / f32::from(q[n])).round() as i32;
        }
        let diff = zz[0] - *pred;
        *pred = zz[0];
        let (size, bits) = magnitude_bits(diff);
        let (dc_code, dc_len) = (u32::from(dc.code[size as usize]), u32::from(dc.len[size as usize]));
        let mut pending = vec![(dc_code, dc_len), (bits, size)];
        let mut run = 0;
        for &v in &zz[1..] {
            if v == 0 {
                run += 1;
                continue;
            }
            while run > 15 {
                pending.push((u32::from(ac.code[0xf0]), u32::from(ac.len[0xf0])));
                run -= 16;
            }
            let (size, bits) = magnitude_bits(v);
            let sym = (run << 4 | size) as usize;
            pending.push((u32::from(ac.code[sym]), u32::from(ac.len[sym])));
            pending.push((bits, size));
            run = 0;
        }
        if run > 0 {
            pending.push((u32::from(ac.code[0]), u32::from(ac.len[0])));
        }
        for (code, len) in pending {
            if len > 0 {
                self.w.put(code, len);
            }
        }
    }
}

/// Encodes interleaved 8-bit RGB as a baseline JPEG.
pub fn encode_jpeg(rgb: &[u8], width: usize, height: usize, quality: u8) -> Result<Vec<u8>> {
    if width == 0 || height == 0 || width > 65535 || height > 65535 {
        return Err(Error::Encode(format!("unsupported JPEG dimensions {width}x{height}")));
    }
    if rgb.len() != width * height * 3 {
        return Err(Error::Encode(format!("{} bytes for a {width}x{height} RGB image", rgb.len())));
    }
    let luma_q = scaled_qtable(&LUMA_QTABLE, quality);
    let chroma_q = scaled_qtable(&CHROMA_QTABLE, quality);

    // color conversion on a canvas padded to whole 16x16 MCUs by edge replication
    let (pw, ph) = (width.div_ceil(16) * 16, height.div_ceil(16) * 16);
    let mut planes = [vec![0f32; pw * ph], vec![0f32; pw * ph], vec![0f32; pw * ph]];
    for y in 0..ph {
        for x in 0..pw {
            let s = (y.min(height - 1) * width + x.min(width - 1)) * 3;
            let (r, g, b) = (f32::from(rgb[s]), f32::from(rgb[s + 1]), f32::from(rgb[s + 2]));
            let i = y * pw + x;
            planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
            planes[1][i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b;
            planes[2][i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b;
        }
    }
    let (cw, ch) = (pw / 2, ph / 2);
    let sub = |p: &[f32]| -> Vec<f32> {
        let mut out = vec![0f32; cw * ch];
        for y in 0..ch {
            for x in 0..cw {
                let i = 2 * y * pw + 2 * x;
                out[y * cw + x] = (p[i] + p[i + 1] + p[i + pw] + p[i + pw + 1]) / 4.0;
            }
        }
        out
    };
    let (cb, cr) = (sub(&planes[1]), sub(&planes[2]));

    let mut out = Vec::with_capacity(width * height / 4 + 1024);
    out.extend_from_slice(&[0xff, 0xd8]);
    segment(&mut out, 0xe0, &[b'J', b'F', b'I', b'F', 0, 1, 1, 0, 0, 1, 0, 1, 0, 0]);
    let mut dqt = Vec::with_capacity(130);
    for (id, t) in [(0u8, &luma_q), (1, &chroma_q)] {
        dqt.push(id);
        dqt.extend(ZIGZAG.iter().map(|&n| t[n] as u8));
    }
    segment(&mut out, 0xdb, &dqt);
    let mut sof = vec![8];
    sof.extend_from_slice(&(height as u16).to_be_bytes());
    sof.extend_from_slice(&(width as u16).to_be_bytes());
    sof.extend_from_slice(&[3, 1, 0x22, 0, 2, 0x11, 1, 3, 0x11, 1]);
    segment(&mut out, 0xc0, &sof);
    for (class_id, bits, values) in [
        (0x00u8, &DC_LUMA_BITS, &DC_VALUES[..]),
        (0x10, &AC_LUMA_BITS, &AC_LUMA_VALUES[..]),
        (0x01, &DC_CHROMA_BITS, &DC_VALUES[..]),
        (0x11, &AC_CHROMA_BITS, &AC_CHROMA_VALUES[..]),
    ] {
        let mut body = vec![class_id];
        body.extend_from_slice(bits);
        body.extend_from_slice(values);
        segment(&mut out, 0xc4, &body);
    }
    segment(&mut out, 0xda, &[3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0]);

    let mut enc = Encoder {
        w: BitWriter { out, acc: 0, nbits: 0 },
        basis: dct_basis(),
        tables: [
            (&luma_q, HuffTable::new(&DC_LUMA_BITS, &DC_VALUES), HuffTable::new(&AC_LUMA_BITS, &AC_LUMA_VALUES)),
            (
                &chroma_q,
                HuffTable::new(&DC_CHROMA_BITS, &DC_VALUES),
                HuffTable::new(&AC_CHROMA_BITS, &AC_CHROMA_VALUES),
            ),
        ],
    };
    let gather = |p: &[f32], stride: usize, top: usize, left: usize| -> [f32; 64] {
        let mut b = [0f32; 64];
        for y in 0..8 {
            b[y * 8..y * 8 + 8].copy_from_slice(&p[(top + y) * stride + left..][..8]);
        }
        b
    };
    let mut preds = [0i32; 3];
    for my in 0..ph / 16 {
        for mx in 0..pw / 16 {
            for (dy, dx) in [(0, 0), (0, 8), (8, 0), (8, 8)] {
                let b = gather(&planes[0], pw, my * 16 + dy, mx * 16 + dx);
                enc.block(&b, 0, &mut preds[0]);
            }
            enc.block(&gather(&cb, cw, my * 8, mx * 8), 1, &mut preds[1]);
            enc.block(&gather(&cr, cw, my * 8, mx * 8), 1, &mut preds[2]);
        }
    }
    enc.w.flush();
    let mut out = enc.w.out;
    out.extend_from_slice(&[0xff, 0xd9]);
    Ok(out)
}
