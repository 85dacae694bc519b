use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use plotters::prelude::*;
use serde_json::json;

use crate::{CmdResult, Exit, Failure, Out};

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// CSV file with a header row, e.g. safety_series.csv.
    pub csv: PathBuf,
    /// Column for the horizontal axis.
    #[arg(long, default_value = "t_s")]
    pub x: String,
    /// Column to draw; repeatable.
    #[arg(long, required = true)]
    pub y: Vec<String>,
    /// Draw one line per distinct value of these columns; repeatable.
    #[arg(long)]
    pub group: Vec<String>,
    /// Output SVG file.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
    /// Image size in pixels, WIDTHxHEIGHT.
    #[arg(long, default_value = "960x540")]
    pub size: String,
}

/// One drawn line: label and (x, y) points in file order.
type Series = (String, Vec<(f64, f64)>);

fn read_series(args: &PlotArgs) -> Result<Vec<Series>, Failure> {
    let mut rdr = csv::Reader::from_path(&args.csv).map_err(|e| Failure::io(format!("{}: {e}", args.csv.display())))?;
    let headers = rdr.headers().map_err(|e| Failure::new(Exit::Validation, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::new(Exit::Usage, format!("no column {name:?} in {}", args.csv.display())))
    };
    let xi = col(&args.x)?;
    let yis: Vec<usize> = args.y.iter().map(|y| col(y)).collect::<Result<_, _>>()?;
    let gis: Vec<usize> = args.group.iter().map(|g| col(g)).collect::<Result<_, _>>()?;
    let mut lines: BTreeMap<(String, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Failure::new(Exit::Validation, format!("row {}: {e}", row + 2)))?;
        let Some(x) = rec.get(xi).and_then(|v| v.trim().parse::<f64>().ok()) else {
            continue;
        };
        let key: Vec<String> = args.group.iter().zip(&gis).map(|(g, &i)| format!("{g}={}", rec.get(i).unwrap_or(""))).collect();
        let key = key.join(" ");
        for (k, &yi) in yis.iter().enumerate() {
            // Empty cells are absent values and break the line.
            if let Some(y) = rec.get(yi).and_then(|v| v.trim().parse::<f64>().ok()).filter(|y| y.is_finite()) {
                lines.entry((key.clone(), k)).or_default().push((x, y));
            }
        }
    }
    Ok(lines
        .into_iter()
        .map(|((key, k), pts)| {
            let label = if key.is_empty() { args.y[k].clone() } else { format!("{} {key}", args.y[k]) };
            (label, pts)
        })
        .collect())
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    (lo - pad, hi + pad)
}

fn draw(args: &PlotArgs, series: &[Series], size: (u32, u32)) -> Result<(), Box<dyn std::error::Error>> {
    let root = SVGBackend::new(&args.out, size).into_drawing_area();
    root.fill(&WHITE)?;
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let title = args.title.clone().unwrap_or_else(|| args.csv.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default());
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)?;
    chart.configure_mesh().x_desc(&args.x).y_desc(args.y.join(", ")).draw()?;
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    if !series.is_empty() {
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    }
    root.present()?;
    Ok(())
}

pub fn run(args: PlotArgs, out: Out) -> CmdResult {
    let size = args
        .size
        .split_once('x')
        .and_then(|(w, h)| Some((w.parse::<u32>().ok()?, h.parse::<u32>().ok()?)))
        .filter(|&(w, h)| w >= 100 && h >= 100)
        .ok_or_else(|| Failure::new(Exit::Usage, format!("bad --size {:?}; expected e.g. 960x540", args.size)))?;
    let series = read_series(&args)?;
    draw(&args, &series, size).map_err(|e| Failure::io(format!("cannot render {}: {e}", args.out.display())))?;
    let value = json!({
        "out": args.out,
        "series": series.iter().map(|(l, p)| json!({ "label": l, "points": p.len() })).collect::<Vec<_>>(),
    });
    out.emit(&value, || {
        let mut t = String::new();
        for (l, p) in &series {
            t += &format!("{l}: {} points\n", p.len());
        }
        t + &format!("wrote {}\n", args.out.display())
    });
    Ok(())
}
