fn main() {
    for n in [10u32, 20, 25, 30, 40, 50, 55, 60, 70] {
        let p = gowerslab_core::folner::borel_cantelli_partial(4, n);
        println!("n={n:3} partial={:.9} tail={:.3e} clamped={}", p.partial, p.tail_bound, p.clamped_terms);
    }
    let p20 = gowerslab_core::folner::borel_cantelli_partial(4, 20).partial;
    let p30 = gowerslab_core::folner::borel_cantelli_partial(4, 30).partial;
    println!("delta 20->30 = {:.6e}", (p30 - p20).abs());
}
