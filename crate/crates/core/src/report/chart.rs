//! Minimal raster bar chart.

use crate::data::GrayImage;

#[derive(Clone, Debug)]
pub struct ChartStyle {
    pub bar_width: usize,
    pub bar_gap: usize,
    pub plot_height: usize,
    pub margin: usize,
    pub background: u8,
    pub axis: u8,
    pub bar: u8,
    pub highlight: u8,
}

impl Default for ChartStyle {
    fn default() -> Self {
        Self {
            bar_width: 2,
            bar_gap: 1,
            plot_height: 160,
            margin: 12,
            background: 255,
            axis: 0,
            bar: 150,
            highlight: 40,
        }
    }
}

impl ChartStyle {
    fn pitch(&self) -> usize {
        self.bar_width + self.bar_gap
    }

    fn baseline(&self) -> usize {
        self.margin + self.plot_height
    }
}

/// One bar per value (at least one pixel tall), an x/y axis, and a marker
/// triangle plus a darker bar at `highlight`.
pub fn bar_chart(values: &[f64], highlight: usize, style: &ChartStyle) -> GrayImage {
    let n = values.len().max(1);
    let w = 2 * style.margin + n * style.pitch();
    let h = style.baseline() + style.margin;
    let mut px = vec![style.background; w * h];
    let base = style.baseline();
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    let mut set = |x: usize, y: usize, v: u8| {
        if x < w && y < h {
            px[y * w + x] = v;
        }
    };
    for (i, &v) in values.iter().enumerate() {
        let frac = if max > 0.0 && v.is_finite() {
            (v.max(0.0) / max).min(1.0)
        } else {
            0.0
        };
        let bar_h = ((frac * (style.plot_height - 8) as f64).round() as usize).max(1);
        let x0 = style.margin + i * style.pitch() + style.bar_gap;
        let shade = if i == highlight {
            style.highlight
        } else {
            style.bar
        };
        for y in base - bar_h..base {
            for x in x0..x0 + style.bar_width {
                set(x, y, shade);
            }
        }
        if i == highlight {
            let top = base - bar_h;
            for k in 0..4usize {
                let y = top.saturating_sub(2 + 4 - k);
                let cx = x0 + style.bar_width / 2;
                for x in cx.saturating_sub(k)..=cx + k {
                    set(x, y, style.highlight);
                }
            }
        }
    }
    for x in style.margin - 1..w - style.margin + 1 {
        set(x, base, style.axis);
    }
    for y in style.margin..=base {
        set(style.margin - 1, y, style.axis);
    }
    GrayImage::new(w, h, px).expect("consistent chart size")
}

/// Number of distinct bars along the row just above the axis.
pub fn count_bars(img: &GrayImage, style: &ChartStyle) -> usize {
    let y = style.baseline() - 1;
    let mut count = 0;
    let mut inside = false;
    for x in style.margin..img.width() {
        let v = img.get(x, y);
        let is_bar = v == style.bar || v == style.highlight;
        if is_bar && !inside {
            count += 1;
        }
        inside = is_bar;
    }
    count
}
