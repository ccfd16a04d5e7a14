//! Parsing of raw CSS attribute strings into numbers.

use crate::ingest::Viewport;

/// Base font size used to resolve relative units.
pub const BASE_FONT_PX: f64 = 16.0;

/// Keywords that mean "use the manifest default".
const DEFAULTING_KEYWORDS: &[&str] = &["auto", "normal", "none", "initial", "inherit", "unset", "currentcolor"];

pub fn is_defaulting_keyword(raw: &str) -> bool {
    let v = raw.trim().to_ascii_lowercase();
    DEFAULTING_KEYWORDS.contains(&v.as_str())
}

/// `(R, G, B, opacity)` with channels in 0–255 and opacity in 0–1.
pub fn parse_color(raw: &str) -> Option<[f64; 4]> {
    let c = csscolorparser::parse(raw.trim()).ok()?;
    let [r, g, b, _] = c.to_rgba8();
    let a = (f64::from(c.a.clamp(0.0, 1.0)) * 1e6).round() / 1e6;
    Some([f64::from(r), f64::from(g), f64::from(b), a])
}

/// Resolve a single CSS length token to px.
pub fn parse_length(raw: &str, viewport: &Viewport) -> Option<f64> {
    let v = raw.trim().to_ascii_lowercase();
    let split = v
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == '+' || c == 'e'))
        .unwrap_or(v.len());
    // "e" is ambiguous with "em"; back off when the suffix starts with "m".
    let split = if split > 0 && v[..split].ends_with('e') && v[split..].starts_with('m') {
        split - 1
    } else {
        split
    };
    let (num, unit) = v.split_at(split);
    let x: f64 = num.parse().ok()?;
    if !x.is_finite() {
        return None;
    }
    let px = match unit.trim() {
        "" | "px" => x,
        "pt" => x * 4.0 / 3.0,
        "pc" => x * 16.0,
        "in" => x * 96.0,
        "cm" => x * 96.0 / 2.54,
        "mm" => x * 96.0 / 25.4,
        "em" | "rem" => x * BASE_FONT_PX,
        "%" => x / 100.0 * BASE_FONT_PX,
        "vw" => x / 100.0 * f64::from(viewport.width_px),
        "vh" => x / 100.0 * f64::from(viewport.height_px),
        _ => return None,
    };
    Some(px)
}

pub fn parse_number(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Expand a 1–4 value box shorthand into `(top, left, right, bottom)`.
///
/// CSS lists sides as top, right, bottom, left; missing sides copy their
/// opposite. `None` entries are defaulting keywords such as `auto`.
#[allow(clippy::result_unit_err)]
pub fn parse_box_shorthand(raw: &str, viewport: &Viewport) -> Result<[Option<f64>; 4], ()> {
    let parts: Vec<&str> = raw.split_whitespace().collect();
    let one = |s: &str| -> Result<Option<f64>, ()> {
        if is_defaulting_keyword(s) {
            Ok(None)
        } else {
            parse_length(s, viewport).map(Some).ok_or(())
        }
    };
    let vals = parts.iter().map(|p| one(p)).collect::<Result<Vec<_>, _>>()?;
    let (top, right, bottom, left) = match vals.as_slice() {
        [a] => (*a, *a, *a, *a),
        [a, b] => (*a, *b, *a, *b),
        [a, b, c] => (*a, *b, *c, *b),
        [a, b, c, d] => (*a, *b, *c, *d),
        _ => return Err(()),
    };
    Ok([top, left, right, bottom])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colors() {
        assert_eq!(parse_color("rgba(255,0,0,0.5)"), Some([255., 0., 0., 0.5]));
        assert_eq!(parse_color("#00ff00"), Some([0., 255., 0., 1.]));
        assert_eq!(parse_color("transparent"), Some([0., 0., 0., 0.]));
        assert_eq!(parse_color("rgb(10, 20, 30)"), Some([10., 20., 30., 1.]));
        assert!(parse_color("not-a-color").is_none());
    }

    #[test]
    fn lengths() {
        let vp = Viewport::default();
        assert_eq!(parse_length("16px", &vp), Some(16.0));
        assert_eq!(parse_length("1.5em", &vp), Some(24.0));
        assert_eq!(parse_length("12pt", &vp), Some(16.0));
        assert_eq!(parse_length("0", &vp), Some(0.0));
        assert_eq!(parse_length("10vw", &vp), Some(168.0));
        assert_eq!(parse_length("-2px", &vp), Some(-2.0));
        assert!(parse_length("wide", &vp).is_none());
        assert!(parse_length("3furlongs", &vp).is_none());
    }

    #[test]
    fn shorthand_order() {
        let vp = Viewport::default();
        let p = parse_box_shorthand("1px 2px 3px 4px", &vp).unwrap();
        assert_eq!(p, [Some(1.), Some(4.), Some(2.), Some(3.)]);
        let p = parse_box_shorthand("1px 2px", &vp).unwrap();
        assert_eq!(p, [Some(1.), Some(2.), Some(2.), Some(1.)]);
        let p = parse_box_shorthand("0 auto", &vp).unwrap();
        assert_eq!(p, [Some(0.), None, None, Some(0.)]);
        assert!(parse_box_shorthand("", &vp).is_err());
        assert!(parse_box_shorthand("1px 2px 3px 4px 5px", &vp).is_err());
    }
}
