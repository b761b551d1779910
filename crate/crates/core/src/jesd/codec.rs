//! 8b/10b line code with running-disparity tracking.
//!
//! Symbols are 10-bit values written `abcdei fghj` with `a` in bit 9, which
//! is also the first bit on the wire.

use std::sync::OnceLock;

use thiserror::Error;

/// K28.5, the comma character used for code-group synchronization.
pub const K28_5: u8 = 0xBC;
/// K28.0 (`/R/`), first octet of every ILA multiframe.
pub const K28_0: u8 = 0x1C;
/// K28.3 (`/A/`), last octet of every ILA multiframe.
pub const K28_3: u8 = 0x7C;
/// K28.4 (`/Q/`), marks the start of the ILA configuration data.
pub const K28_4: u8 = 0x9C;

/// K28.5 encoded from negative running disparity.
pub const COMMA_RD_MINUS: u16 = 0b001111_1010;
/// K28.5 encoded from positive running disparity.
pub const COMMA_RD_PLUS: u16 = 0b110000_0101;

/// The seven-bit comma sequence (and its complement) that only control
/// characters can produce.
pub const COMMA_BITS: u8 = 0b0011111;
pub const COMMA_BITS_INV: u8 = 0b1100000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Disparity {
    Negative,
    Positive,
}

impl Disparity {
    fn flip(self) -> Self {
        match self {
            Disparity::Negative => Disparity::Positive,
            Disparity::Positive => Disparity::Negative,
        }
    }

    pub fn sign(self) -> i32 {
        match self {
            Disparity::Negative => -1,
            Disparity::Positive => 1,
        }
    }
}

/// Running disparity of one encoder or decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecState {
    pub running_disparity: Disparity,
}

impl Default for CodecState {
    fn default() -> Self {
        Self { running_disparity: Disparity::Negative }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CodeError {
    #[error("octet {0:#04x} is not a valid control character")]
    InvalidControl(u8),
    #[error("symbol {0:#012b} is not a valid code group")]
    InvalidSymbol(u16),
    #[error("symbol {symbol:#012b} is not valid for the current running disparity")]
    Disparity { symbol: u16, octet: u8, is_control: bool },
}

// 5b/6b sub-block, indexed by EDCBA. (RD-, RD+)
const SIX: [(u8, u8); 32] = [
    (0b100111, 0b011000),
    (0b011101, 0b100010),
    (0b101101, 0b010010),
    (0b110001, 0b110001),
    (0b110101, 0b001010),
    (0b101001, 0b101001),
    (0b011001, 0b011001),
    (0b111000, 0b000111),
    (0b111001, 0b000110),
    (0b100101, 0b100101),
    (0b010101, 0b010101),
    (0b110100, 0b110100),
    (0b001101, 0b001101),
    (0b101100, 0b101100),
    (0b011100, 0b011100),
    (0b010111, 0b101000),
    (0b011011, 0b100100),
    (0b100011, 0b100011),
    (0b010011, 0b010011),
    (0b110010, 0b110010),
    (0b001011, 0b001011),
    (0b101010, 0b101010),
    (0b011010, 0b011010),
    (0b111010, 0b000101),
    (0b110011, 0b001100),
    (0b100110, 0b100110),
    (0b010110, 0b010110),
    (0b110110, 0b001001),
    (0b001110, 0b001110),
    (0b101110, 0b010001),
    (0b011110, 0b100001),
    (0b101011, 0b010100),
];
const SIX_K28: (u8, u8) = (0b001111, 0b110000);

// 3b/4b sub-block for data, indexed by HGF. (RD-, RD+)
const FOUR_DATA: [(u8, u8); 8] = [
    (0b1011, 0b0100),
    (0b1001, 0b1001),
    (0b0101, 0b0101),
    (0b1100, 0b0011),
    (0b1101, 0b0010),
    (0b1010, 0b1010),
    (0b0110, 0b0110),
    (0b1110, 0b0001),
];
const FOUR_A7: (u8, u8) = (0b0111, 0b1000);

// 3b/4b sub-block for control characters, indexed by HGF. (RD-, RD+)
const FOUR_CTRL: [(u8, u8); 8] = [
    (0b1011, 0b0100),
    (0b0110, 0b1001),
    (0b1010, 0b0101),
    (0b1100, 0b0011),
    (0b1101, 0b0010),
    (0b0101, 0b1010),
    (0b1001, 0b0110),
    (0b0111, 0b1000),
];

/// The twelve control characters of the code.
pub const CONTROL_OCTETS: [u8; 12] = [
    0x1C, 0x3C, 0x5C, 0x7C, 0x9C, 0xBC, 0xDC, 0xFC, // K28.0 - K28.7
    0xF7, 0xFB, 0xFD, 0xFE, // K23.7, K27.7, K29.7, K30.7
];

pub fn is_valid_control(octet: u8) -> bool {
    CONTROL_OCTETS.contains(&octet)
}

fn pick(pair: (u8, u8), rd: Disparity) -> u8 {
    match rd {
        Disparity::Negative => pair.0,
        Disparity::Positive => pair.1,
    }
}

/// Disparity after a sub-block: unbalanced sub-blocks flip the sign.
fn after(bits: u8, width: u32, rd: Disparity) -> Disparity {
    let ones = bits.count_ones() as i32;
    if ones * 2 == width as i32 {
        rd
    } else {
        rd.flip()
    }
}

/// Encodes one octet, returning the 10-bit code group and the new state.
pub fn encode_8b10b(octet: u8, is_control: bool, state: CodecState) -> Result<(u16, CodecState), CodeError> {
    let x = (octet & 0x1F) as usize;
    let y = (octet >> 5) as usize;
    let rd = state.running_disparity;
    let six = if is_control {
        if !is_valid_control(octet) {
            return Err(CodeError::InvalidControl(octet));
        }
        if x == 28 {
            pick(SIX_K28, rd)
        } else {
            pick(SIX[x], rd)
        }
    } else {
        pick(SIX[x], rd)
    };
    let mid = after(six, 6, rd);
    let four = if is_control {
        pick(FOUR_CTRL[y], mid)
    } else if y == 7
        && ((mid == Disparity::Negative && matches!(x, 17 | 18 | 20))
            || (mid == Disparity::Positive && matches!(x, 11 | 13 | 14)))
    {
        pick(FOUR_A7, mid)
    } else {
        pick(FOUR_DATA[y], mid)
    };
    let end = after(four, 4, mid);
    Ok((((six as u16) << 4) | four as u16, CodecState { running_disparity: end }))
}

#[derive(Debug, Clone, Copy)]
struct DecodeEntry {
    octet: u8,
    is_control: bool,
    // which entry disparities produce this symbol, and the state afterwards
    from_negative: Option<Disparity>,
    from_positive: Option<Disparity>,
}

fn decode_table() -> &'static [Option<DecodeEntry>; 1024] {
    static TABLE: OnceLock<[Option<DecodeEntry>; 1024]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [None; 1024];
        let mut insert = |octet: u8, is_control: bool| {
            for rd in [Disparity::Negative, Disparity::Positive] {
                let (sym, next) = encode_8b10b(octet, is_control, CodecState { running_disparity: rd })
                    .expect("table construction uses valid inputs");
                let e = table[sym as usize].get_or_insert(DecodeEntry {
                    octet,
                    is_control,
                    from_negative: None,
                    from_positive: None,
                });
                debug_assert!(e.octet == octet && e.is_control == is_control);
                match rd {
                    Disparity::Negative => e.from_negative = Some(next.running_disparity),
                    Disparity::Positive => e.from_positive = Some(next.running_disparity),
                }
            }
        };
        for octet in 0..=255u8 {
            insert(octet, false);
        }
        for &k in &CONTROL_OCTETS {
            insert(k, true);
        }
        table
    })
}

/// Decoded code group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decoded {
    pub octet: u8,
    pub is_control: bool,
}

/// Decodes one code group. On a disparity error the state is still
/// advanced as if the symbol had been sent from the opposite disparity so
/// that a single error does not cascade.
pub fn decode_8b10b(symbol: u16, state: &mut CodecState) -> Result<Decoded, CodeError> {
    let entry = decode_table().get(symbol as usize).copied().flatten().ok_or(CodeError::InvalidSymbol(symbol))?;
    let (expected, other) = match state.running_disparity {
        Disparity::Negative => (entry.from_negative, entry.from_positive),
        Disparity::Positive => (entry.from_positive, entry.from_negative),
    };
    match expected {
        Some(next) => {
            state.running_disparity = next;
            Ok(Decoded { octet: entry.octet, is_control: entry.is_control })
        }
        None => {
            state.running_disparity = other.expect("every valid symbol has one entry disparity");
            Err(CodeError::Disparity { symbol, octet: entry.octet, is_control: entry.is_control })
        }
    }
}

/// True if `symbol` is a K28.5 comma in either disparity.
pub fn is_comma(symbol: u16) -> bool {
    symbol == COMMA_RD_MINUS || symbol == COMMA_RD_PLUS
}

/// Streaming encoder for one lane.
#[derive(Debug, Clone, Default)]
pub struct Encoder {
    state: CodecState,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_state(state: CodecState) -> Self {
        Self { state }
    }

    pub fn state(&self) -> CodecState {
        self.state
    }

    pub fn encode(&mut self, octet: u8, is_control: bool) -> Result<u16, CodeError> {
        let (sym, next) = encode_8b10b(octet, is_control, self.state)?;
        self.state = next;
        Ok(sym)
    }

    pub fn data(&mut self, octet: u8) -> u16 {
        self.encode(octet, false).expect("data octets always encode")
    }

    pub fn control(&mut self, octet: u8) -> u16 {
        self.encode(octet, true).expect("caller passes a valid control octet")
    }
}
