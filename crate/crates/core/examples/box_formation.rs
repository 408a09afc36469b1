//! Differentiable-binarization post-processing on a synthetic page map.

use scriptline::dbpost::{approx_binary_map, box_formation, make_targets, raster_iou, DbParams, TextPolygon};
use scriptline::imaging::GrayImage;

fn main() -> scriptline::Result<()> {
    let params = DbParams::default();
    let lines = [
        TextPolygon::rect(8.0, 6.0, 90.0, 18.0, 1.0)?,
        TextPolygon::rect(14.0, 28.0, 70.0, 40.0, 1.0)?,
    ];
    // the supervision target doubles as an ideal probability map
    let targets = make_targets(&lines, 100, 48, params.shrink_ratio, params.t_min, params.t_max)?;
    let prob = targets.prob_target.to_gray();
    let thresh = GrayImage::from_vec(100, 48, targets.thresh_target.data().to_vec())?;
    for (name, map) in [("probability", prob.clone()), ("approximate binary", approx_binary_map(&prob, &thresh, params.k)?.map)] {
        let polys = box_formation(&map, &params)?;
        println!("{name} map: {} polygons", polys.len());
        for p in &polys {
            let best = lines.iter().map(|g| raster_iou(p, g)).fold(0.0, f64::max);
            println!("  score {:.3}, area {:.1}, best IoU with a line {best:.3}", p.score(), p.area());
        }
    }
    Ok(())
}
