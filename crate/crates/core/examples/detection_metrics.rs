//! IoU-matched precision, recall and F-measure.

use scriptline::dbpost::{raster_iou, TextPolygon};
use scriptline::metrics::detection_prf;

fn main() -> scriptline::Result<()> {
    let r = |a, b, c, d| TextPolygon::rect(a, b, c, d, 1.0);
    let gt = vec![r(0.0, 0.0, 10.0, 10.0)?, r(0.0, 30.0, 20.0, 36.0)?];
    let pred = vec![r(0.0, 0.0, 10.0, 6.0)?, r(50.0, 50.0, 55.0, 55.0)?, r(0.0, 0.0, 10.0, 9.0)?];
    for (i, p) in pred.iter().enumerate() {
        println!("pred {i}: IoU with gt 0 = {:.2}", raster_iou(p, &gt[0]));
    }
    for t in [0.5, 0.7, 0.95] {
        let s = detection_prf(&gt, &pred, t)?;
        println!("IoU {t}: P {:.2} R {:.2} F {:.2}", s.precision, s.recall, s.f_measure);
    }
    Ok(())
}
