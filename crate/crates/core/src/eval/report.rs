use std::fmt::Write;

/// A grouped bar chart as a standalone SVG document. Values are in `[0, 1]`.
pub fn bar_chart_svg(title: &str, series: &[&str], groups: &[(String, Vec<f64>)]) -> String {
    const COLORS: [&str; 4] = ["#3b6fb6", "#c8553d", "#6a994e", "#8d6cab"];
    let (bar, gap, left, top, plot_h) = (22.0, 26.0, 50.0, 40.0, 220.0);
    let group_w = bar * series.len().max(1) as f64 + gap;
    let width = left + group_w * groups.len() as f64 + 20.0;
    let height = top + plot_h + 70.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="14">{}</text>"#, escape(title));
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{}" y1="{y}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.2}</text>"##,
            width - 20.0,
            left - 4.0,
            y + 4.0
        );
    }
    for (g, (label, values)) in groups.iter().enumerate() {
        let x0 = left + gap / 2.0 + g as f64 * group_w;
        for (i, v) in values.iter().enumerate() {
            let h = plot_h * v.clamp(0.0, 1.0);
            let x = x0 + i as f64 * bar;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{}" width="{}" height="{h}" fill="{}"><title>{}: {v:.3}</title></rect>"#,
                top + plot_h - h,
                bar - 2.0,
                COLORS[i % COLORS.len()],
                escape(series.get(i).copied().unwrap_or(""))
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x0 + (group_w - gap) / 2.0,
            top + plot_h + 16.0,
            escape(label)
        );
    }
    for (i, name) in series.iter().enumerate() {
        let x = left + i as f64 * 160.0;
        let y = top + plot_h + 40.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{y}">{}</text>"#,
            y - 9.0,
            COLORS[i % COLORS.len()],
            x + 14.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Fixed-width text table.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate() {
            w[i] = w[i].max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{c:<0$}", w[i]))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
            + "\n"
    };
    let mut s = line(header.to_vec());
    s += &line(w.iter().map(|&n| "-".repeat(n)).collect::<Vec<_>>().iter().map(|x| x.as_str()).collect());
    for r in rows {
        s += &line(r.iter().map(|x| x.as_str()).collect());
    }
    s
}
