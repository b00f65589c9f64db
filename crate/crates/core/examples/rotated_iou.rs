//! Rotated-rectangle IoU and the grasp success rule on a few hand-picked
//! pairs.
//!
//! cargo run --release --example rotated_iou

use graspmamba::head::GraspRect;
use graspmamba::metrics::{angle_offset_deg, is_success, rotated_iou};

fn main() -> graspmamba::Result<()> {
    let gt = GraspRect::new(50.0, 50.0, 40.0, 20.0, 0.0)?;
    let cases = [
        ("identical", GraspRect::new(50.0, 50.0, 40.0, 20.0, 0.0)?),
        ("shifted 10 px", GraspRect::new(60.0, 50.0, 40.0, 20.0, 0.0)?),
        ("rotated 25 deg", GraspRect::new(50.0, 50.0, 40.0, 20.0, 25f64.to_radians())?),
        ("rotated 35 deg", GraspRect::new(50.0, 50.0, 40.0, 20.0, 35f64.to_radians())?),
        ("flipped 180 deg", GraspRect::new(50.0, 50.0, 40.0, 20.0, std::f64::consts::PI)?),
        ("far away", GraspRect::new(120.0, 50.0, 40.0, 20.0, 0.0)?),
    ];
    println!("{:<16} {:>7} {:>9}  success", "prediction", "IoU", "offset");
    for (name, pred) in cases {
        println!(
            "{name:<16} {:>7.3} {:>8.1}°  {}",
            rotated_iou(&pred, &gt),
            angle_offset_deg(pred.theta, gt.theta),
            is_success(&pred, &[gt])?
        );
    }
    Ok(())
}
