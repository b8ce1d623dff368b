//! Report rendering: a human-readable key-tree text view and a
//! machine-readable JSON sidecar of the same data.
//!
//! Both renderings go through `serde_json::Value`, whose object maps are
//! sorted, so output bytes depend only on the report contents.

use super::PipelineError;

/// Render any serializable report as an indented key tree.
pub fn render_text<T: serde::Serialize>(report: &T) -> Result<String, PipelineError> {
    let value = serde_json::to_value(report)
        .map_err(|e| PipelineError::Validation(format!("report serialization: {e}")))?;
    let mut out = String::new();
    render_value(&value, 0, &mut out);
    Ok(out)
}

pub fn render_json<T: serde::Serialize>(report: &T) -> Result<String, PipelineError> {
    let value = serde_json::to_value(report)
        .map_err(|e| PipelineError::Validation(format!("report serialization: {e}")))?;
    serde_json::to_string_pretty(&value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| PipelineError::Validation(format!("report serialization: {e}")))
}

fn scalar_repr(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::Null => Some("null".to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

fn render_value(v: &serde_json::Value, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match v {
        serde_json::Value::Object(map) => {
            for (k, val) in map {
                match scalar_repr(val) {
                    Some(s) => {
                        out.push_str(&pad);
                        out.push_str(k);
                        out.push_str(": ");
                        out.push_str(&s);
                        out.push('\n');
                    }
                    None => {
                        out.push_str(&pad);
                        out.push_str(k);
                        out.push_str(":\n");
                        render_value(val, indent + 1, out);
                    }
                }
            }
        }
        serde_json::Value::Array(items) => {
            if items.is_empty() {
                out.push_str(&pad);
                out.push_str("[]\n");
                return;
            }
            for item in items {
                match scalar_repr(item) {
                    Some(s) => {
                        out.push_str(&pad);
                        out.push_str("- ");
                        out.push_str(&s);
                        out.push('\n');
                    }
                    None => {
                        // First rendered line of the item carries the dash.
                        let mut inner = String::new();
                        render_value(item, indent + 1, &mut inner);
                        let mut first = true;
                        for line in inner.lines() {
                            if first {
                                out.push_str(&pad);
                                out.push_str("- ");
                                out.push_str(line.trim_start());
                                out.push('\n');
                                first = false;
                            } else {
                                out.push_str(line);
                                out.push('\n');
                            }
                        }
                    }
                }
            }
        }
        other => {
            if let Some(s) = scalar_repr(other) {
                out.push_str(&pad);
                out.push_str(&s);
                out.push('\n');
            }
        }
    }
}

/// Column-file emission for plotting: `x y [yerr]` rows with a comment
/// header naming the columns.
pub fn plot_columns(header: &str, rows: &[Vec<f64>]) -> String {
    let mut s = String::with_capacity(rows.len() * 32);
    s.push_str("# ");
    s.push_str(header);
    s.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                s.push(' ');
            }
            s.push_str(&format!("{v}"));
            first = false;
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Serialize;

    #[derive(Serialize)]
    struct Inner {
        value_hz: f64,
        label: String,
    }

    #[derive(Serialize)]
    struct Demo {
        schema_version: u32,
        items: Vec<Inner>,
        nested: Inner,
        none: Option<f64>,
        flags: Vec<bool>,
    }

    #[test]
    fn text_tree_layout() {
        let demo = Demo {
            schema_version: 1,
            items: vec![
                Inner {
                    value_hz: 4.6e8,
                    label: "a".into(),
                },
                Inner {
                    value_hz: 5.38e8,
                    label: "b".into(),
                },
            ],
            nested: Inner {
                value_hz: 1.0,
                label: "x".into(),
            },
            none: None,
            flags: vec![true, false],
        };
        let text = render_text(&demo).unwrap();
        // Keys are sorted by the JSON value map, arrays keep order.
        assert!(text.contains("schema_version: 1"));
        assert!(text.contains("- label: a"));
        assert!(text.contains("  value_hz: 460000000"));
        assert!(text.contains("none: null"));
        assert!(text.contains("- true"));
        // Deterministic.
        assert_eq!(text, render_text(&demo).unwrap());
        let json = render_json(&demo).unwrap();
        assert!(json.ends_with('\n'));
    }

    #[test]
    fn plot_columns_format() {
        let s = plot_columns("x y yerr", &[vec![1.0, 2.0, 0.1], vec![3.0, 4.0, 0.2]]);
        assert_eq!(s, "# x y yerr\n1 2 0.1\n3 4 0.2\n");
    }
}
