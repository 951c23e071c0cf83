//! Newline-delimited order-flow record format (`.ofr`).
//!
//! One JSON object per line with the fields `ts`, `seq`, `kind`, `side`,
//! `price`, `size`, `id`, written in that order with no whitespace. `price`
//! is absent for market orders and required otherwise. `size` is a plain
//! decimal with at most eight fractional digits, written either as a JSON
//! number or as a JSON string.
//!
//! Only the canonical layout is accepted: any line whose re-encoding would
//! differ (reordered keys, whitespace, escapes that are not needed) is
//! rejected, so every accepted line round-trips byte for byte.

use std::collections::HashMap;

use serde_json::value::RawValue;

use super::event::{EventKind, OrderEvent, Qty, Side, SizeFormat};
use super::FeedError;

const FIELDS: [&str; 7] = ["ts", "seq", "kind", "side", "price", "size", "id"];

pub fn parse_event(line: &str) -> Result<OrderEvent, FeedError> {
    let fields: HashMap<String, Box<RawValue>> = match serde_json::from_str(line) {
        Ok(map) => map,
        Err(err) => {
            // Distinguish valid JSON of the wrong shape from broken syntax.
            return match serde_json::from_str::<serde_json::Value>(line) {
                Ok(_) => Err(FeedError::SchemaViolation(
                    "record is not a JSON object".into(),
                )),
                Err(_) => Err(FeedError::MalformedRecord(err.to_string())),
            };
        }
    };

    if let Some(unknown) = fields.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(FeedError::SchemaViolation(format!(
            "unknown field `{unknown}`"
        )));
    }
    let raw = |name: &str| -> Result<&str, FeedError> {
        fields
            .get(name)
            .map(|v| v.get())
            .ok_or_else(|| FeedError::SchemaViolation(format!("missing field `{name}`")))
    };

    let timestamp_ms: i64 = typed(raw("ts")?, "ts", "an integer")?;
    let seq: u64 = typed(raw("seq")?, "seq", "a non-negative integer")?;
    let kind_text: String = typed(raw("kind")?, "kind", "a string")?;
    let kind = EventKind::from_wire(&kind_text)
        .ok_or_else(|| FeedError::SchemaViolation(format!("bad kind `{kind_text}`")))?;
    let side_text: String = typed(raw("side")?, "side", "a string")?;
    let side = Side::from_wire(&side_text)
        .ok_or_else(|| FeedError::SchemaViolation(format!("bad side `{side_text}`")))?;

    let price_ticks = match (kind, fields.get("price")) {
        (EventKind::Market, Some(_)) => {
            return Err(FeedError::SchemaViolation(
                "market orders carry no price".into(),
            ))
        }
        (EventKind::Market, None) => None,
        (_, None) => {
            return Err(FeedError::SchemaViolation(format!(
                "{} orders require a price",
                kind.as_str()
            )))
        }
        (_, Some(p)) => {
            let price: i64 = typed(p.get(), "price", "an integer")?;
            if price <= 0 {
                return Err(FeedError::InvariantViolation(format!(
                    "price must be positive, got {price}"
                )));
            }
            Some(price)
        }
    };

    let (size, size_format) = parse_size(raw("size")?)?;
    let order_id: String = typed(raw("id")?, "id", "a string")?;

    let event = OrderEvent {
        timestamp_ms,
        seq,
        kind,
        side,
        price_ticks,
        size,
        order_id,
        size_format,
    };
    if serialize_event(&event) != line {
        return Err(FeedError::MalformedRecord(
            "record is not in canonical layout".into(),
        ));
    }
    Ok(event)
}

fn typed<T: serde::de::DeserializeOwned>(
    raw: &str,
    field: &str,
    what: &str,
) -> Result<T, FeedError> {
    serde_json::from_str(raw)
        .map_err(|_| FeedError::SchemaViolation(format!("`{field}` must be {what}")))
}

fn parse_size(raw: &str) -> Result<(Qty, SizeFormat), FeedError> {
    let (text, quoted) = if raw.starts_with('"') {
        let s: String = typed(raw, "size", "a decimal")?;
        (s, true)
    } else {
        (raw.to_string(), false)
    };
    if text.starts_with('-') {
        return Err(FeedError::InvariantViolation(format!(
            "size must be positive, got {text}"
        )));
    }
    let (qty, scale) = Qty::parse_decimal(&text).ok_or_else(|| {
        FeedError::SchemaViolation(format!(
            "`size` must be a plain decimal with at most 8 fractional digits, got {text}"
        ))
    })?;
    if qty.is_zero() {
        return Err(FeedError::InvariantViolation(
            "size must be positive".into(),
        ));
    }
    Ok((qty, SizeFormat { quoted, scale }))
}

/// Canonical single-line encoding, without the trailing newline.
pub fn serialize_event(ev: &OrderEvent) -> String {
    let mut out = String::with_capacity(112);
    out.push_str("{\"ts\":");
    out.push_str(&ev.timestamp_ms.to_string());
    out.push_str(",\"seq\":");
    out.push_str(&ev.seq.to_string());
    out.push_str(",\"kind\":\"");
    out.push_str(ev.kind.as_str());
    out.push_str("\",\"side\":\"");
    out.push_str(ev.side.as_str());
    out.push('"');
    if let Some(price) = ev.price_ticks {
        out.push_str(",\"price\":");
        out.push_str(&price.to_string());
    }
    out.push_str(",\"size\":");
    let size = ev.size.format_scaled(ev.size_format.scale);
    if ev.size_format.quoted {
        out.push('"');
        out.push_str(&size);
        out.push('"');
    } else {
        out.push_str(&size);
    }
    out.push_str(",\"id\":");
    out.push_str(&serde_json::to_string(&ev.order_id).expect("string serialization is infallible"));
    out.push('}');
    out
}
