//! Histogram tables and a minimal SVG bar chart.

use microseg::metrology::EmpiricalDistribution;

pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub unit: &'static str,
}

impl Histogram {
    pub fn of(d: &EmpiricalDistribution, bins: usize) -> Self {
        let (edges, counts) = d.histogram(bins);
        Histogram {
            edges,
            counts,
            unit: d.unit.as_str(),
        }
    }

    pub fn csv(&self) -> String {
        let mut s = format!("bin_start_{u},bin_end_{u},count\n", u = self.unit);
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{:.6},{:.6},{c}\n", self.edges[i], self.edges[i + 1]));
        }
        s
    }

    pub fn svg(&self, title: &str, quantity: &str) -> String {
        let (w, h) = (640.0, 400.0);
        let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
        let plot_w = w - left - right;
        let plot_h = h - top - bottom;
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let bar_w = plot_w / self.counts.len().max(1) as f64;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        );
        s.push_str(&format!("<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
            w / 2.0,
            escape(title)
        ));
        for (i, &c) in self.counts.iter().enumerate() {
            let bh = plot_h * c as f64 / max;
            s.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#4a7fb5\" stroke=\"#1f3f66\"/>\n",
                left + bar_w * i as f64,
                top + plot_h - bh,
                bar_w,
                bh
            ));
        }
        let axis_y = top + plot_h;
        s.push_str(&format!(
            "<line x1=\"{left}\" y1=\"{axis_y}\" x2=\"{}\" y2=\"{axis_y}\" stroke=\"black\"/>\n",
            left + plot_w
        ));
        s.push_str(&format!(
            "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{axis_y}\" stroke=\"black\"/>\n"
        ));
        let ticks = 5.min(self.counts.len());
        for t in 0..=ticks {
            let i = t * self.counts.len() / ticks.max(1);
            let x = left + bar_w * i as f64;
            s.push_str(&format!(
                "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{:.3}</text>\n",
                axis_y + 16.0,
                self.edges[i]
            ));
        }
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{} ({})</text>\n",
            left + plot_w / 2.0,
            h - 12.0,
            escape(quantity),
            self.unit
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            left - 6.0,
            top + 4.0,
            max as usize
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">0</text>\n",
            left - 6.0,
            axis_y
        ));
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
