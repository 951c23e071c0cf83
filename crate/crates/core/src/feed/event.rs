use std::fmt;

/// Number of fractional decimal digits carried by [`Qty`].
pub const QTY_DECIMALS: u32 = 8;
/// Base units per whole quantity.
pub const QTY_SCALE: u64 = 100_000_000;

/// Order quantity in fixed-point units of 1e-8.
///
/// Book arithmetic on quantities is exact; converting to `f64` only happens
/// at the feature boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Qty(pub u64);

impl Qty {
    pub const ZERO: Qty = Qty(0);

    pub fn from_units(units: u64) -> Self {
        Qty(units)
    }

    pub fn units(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / QTY_SCALE as f64
    }

    pub fn min(self, other: Qty) -> Qty {
        Qty(self.0.min(other.0))
    }

    /// Fewest fractional digits needed to print this quantity exactly.
    pub fn natural_scale(self) -> u8 {
        let mut frac = self.0 % QTY_SCALE;
        if frac == 0 {
            return 0;
        }
        let mut scale = QTY_DECIMALS as u8;
        while frac.is_multiple_of(10) {
            frac /= 10;
            scale -= 1;
        }
        scale
    }

    /// Decimal rendering with exactly `scale` fractional digits.
    ///
    /// `scale` must be at least [`Qty::natural_scale`], otherwise digits are lost.
    pub fn format_scaled(self, scale: u8) -> String {
        let whole = self.0 / QTY_SCALE;
        if scale == 0 {
            return whole.to_string();
        }
        let frac = self.0 % QTY_SCALE;
        let digits = format!("{:08}", frac);
        format!("{}.{}", whole, &digits[..scale as usize])
    }

    /// Parses a plain decimal (`12`, `0.5`, `3.1400`), returning the value and
    /// the number of fractional digits written.
    pub fn parse_decimal(text: &str) -> Option<(Qty, u8)> {
        let (whole, frac) = match text.split_once('.') {
            Some((w, f)) => (w, Some(f)),
            None => (text, None),
        };
        if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let whole: u64 = whole.parse().ok()?;
        let (frac_units, scale) = match frac {
            None => (0, 0),
            Some(f) => {
                if f.is_empty()
                    || f.len() > QTY_DECIMALS as usize
                    || !f.bytes().all(|b| b.is_ascii_digit())
                {
                    return None;
                }
                let padded = format!("{:0<8}", f);
                (padded.parse::<u64>().ok()?, f.len() as u8)
            }
        };
        let units = whole.checked_mul(QTY_SCALE)?.checked_add(frac_units)?;
        Some((Qty(units), scale))
    }
}

impl std::ops::Add for Qty {
    type Output = Qty;
    fn add(self, rhs: Qty) -> Qty {
        Qty(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for Qty {
    fn add_assign(&mut self, rhs: Qty) {
        self.0 += rhs.0;
    }
}

impl std::ops::Sub for Qty {
    type Output = Qty;
    fn sub(self, rhs: Qty) -> Qty {
        Qty(self.0 - rhs.0)
    }
}

impl std::ops::SubAssign for Qty {
    fn sub_assign(&mut self, rhs: Qty) {
        self.0 -= rhs.0;
    }
}

impl fmt::Display for Qty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.format_scaled(self.natural_scale()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Limit,
    Market,
    Cancel,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Limit => "limit",
            EventKind::Market => "market",
            EventKind::Cancel => "cancel",
        }
    }

    pub fn from_wire(s: &str) -> Option<Self> {
        match s {
            "limit" => Some(EventKind::Limit),
            "market" => Some(EventKind::Market),
            "cancel" => Some(EventKind::Cancel),
            _ => None,
        }
    }

    /// Category code used by the order-flow covariates: 1 limit, 2 market, 3 cancel.
    pub fn category(self) -> u8 {
        match self {
            EventKind::Limit => 1,
            EventKind::Market => 2,
            EventKind::Cancel => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
        }
    }

    pub fn from_wire(s: &str) -> Option<Self> {
        match s {
            "buy" => Some(Side::Buy),
            "sell" => Some(Side::Sell),
            _ => None,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }

    /// Category code used by the order-flow covariates: 1 buy, 2 sell.
    pub fn category(self) -> u8 {
        match self {
            Side::Buy => 1,
            Side::Sell => 2,
        }
    }
}

/// How the `size` field was written on the wire, kept so a parsed record
/// serializes back to the same bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SizeFormat {
    pub quoted: bool,
    pub scale: u8,
}

impl SizeFormat {
    pub fn natural(size: Qty) -> Self {
        SizeFormat {
            quoted: false,
            scale: size.natural_scale(),
        }
    }
}

/// One exchange message.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OrderEvent {
    pub timestamp_ms: i64,
    pub seq: u64,
    pub kind: EventKind,
    pub side: Side,
    /// Absent exactly for market orders.
    pub price_ticks: Option<i64>,
    pub size: Qty,
    pub order_id: String,
    pub size_format: SizeFormat,
}

impl OrderEvent {
    pub fn limit(
        timestamp_ms: i64,
        seq: u64,
        side: Side,
        price_ticks: i64,
        size: Qty,
        id: impl Into<String>,
    ) -> Self {
        Self::new(
            timestamp_ms,
            seq,
            EventKind::Limit,
            side,
            Some(price_ticks),
            size,
            id,
        )
    }

    pub fn market(
        timestamp_ms: i64,
        seq: u64,
        side: Side,
        size: Qty,
        id: impl Into<String>,
    ) -> Self {
        Self::new(timestamp_ms, seq, EventKind::Market, side, None, size, id)
    }

    pub fn cancel(
        timestamp_ms: i64,
        seq: u64,
        side: Side,
        price_ticks: i64,
        size: Qty,
        id: impl Into<String>,
    ) -> Self {
        Self::new(
            timestamp_ms,
            seq,
            EventKind::Cancel,
            side,
            Some(price_ticks),
            size,
            id,
        )
    }

    fn new(
        timestamp_ms: i64,
        seq: u64,
        kind: EventKind,
        side: Side,
        price_ticks: Option<i64>,
        size: Qty,
        id: impl Into<String>,
    ) -> Self {
        OrderEvent {
            timestamp_ms,
            seq,
            kind,
            side,
            price_ticks,
            size,
            order_id: id.into(),
            size_format: SizeFormat::natural(size),
        }
    }
}
