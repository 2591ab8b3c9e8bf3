//! Every Boolean operation on two small overlapping layers.

use litho::boolean::{boolean, BoolOpKind, BoolOptions};
use litho::geometry::{signed_area2, Polygon};

fn main() {
    let a = vec![Polygon::rect(0, 0, 100, 60), Polygon::rect(140, 0, 180, 60)];
    let b = [Polygon::rect(60, 20, 160, 100)];
    let opts = BoolOptions { size_delta: 5, ..Default::default() };

    for op in BoolOpKind::ALL {
        let other = if op.is_unary() { None } else { Some(&b[..]) };
        let out = boolean(op, &a, other, &opts).expect("valid input");
        let area: i128 = out.iter().map(|p| signed_area2(p).unwrap()).sum::<i128>() / 2;
        println!("{op:>5}: {} polygons, area {area} dbu^2", out.len());
        for p in &out {
            let pts: Vec<String> = p.vertices.iter().map(|v| format!("({},{})", v.x, v.y)).collect();
            println!("        {}", pts.join(" "));
        }
    }
}
