//! Nelder-Mead simplex minimizer in two dimensions.

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    /// Edge length of the initial simplex.
    pub scale: f64,
    pub max_iters: usize,
    /// Stop once every vertex is within this distance of the best one.
    pub x_tol: f64,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            scale: 0.25,
            max_iters: 500,
            x_tol: 1e-6,
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: [f64; 2],
    pub f: f64,
    pub iters: usize,
    pub converged: bool,
}

fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Minimizes `f` from `x0`. Non-finite objective values are treated as
/// `+inf`, so infeasible points are simply never accepted.
pub fn minimize(f: impl Fn([f64; 2]) -> f64, x0: [f64; 2], opts: &SimplexOptions) -> SimplexResult {
    let eval = |x: [f64; 2]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pts = [x0, [x0[0] + opts.scale, x0[1]], [x0[0], x0[1] + opts.scale]];
    let mut vals = pts.map(eval);

    let mut iters = 0;
    let mut converged = false;
    while iters < opts.max_iters {
        // Order best to worst; stable so ties keep insertion order.
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = idx.map(|i| pts[i]);
        vals = idx.map(|i| vals[i]);

        if dist(pts[1], pts[0]).max(dist(pts[2], pts[0])) <= opts.x_tol {
            converged = true;
            break;
        }
        iters += 1;

        let centroid = lerp(pts[0], pts[1], 0.5);
        let xr = lerp(centroid, pts[2], -opts.reflection);
        let fr = eval(xr);
        if fr < vals[0] {
            let xe = lerp(centroid, pts[2], -opts.expansion);
            let fe = eval(xe);
            if fe < fr {
                pts[2] = xe;
                vals[2] = fe;
            } else {
                pts[2] = xr;
                vals[2] = fr;
            }
            continue;
        }
        if fr < vals[1] {
            pts[2] = xr;
            vals[2] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[2] {
            let xc = lerp(centroid, xr, opts.contraction);
            (xc, eval(xc))
        } else {
            let xc = lerp(centroid, pts[2], opts.contraction);
            (xc, eval(xc))
        };
        if fc < vals[2].min(fr) {
            pts[2] = xc;
            vals[2] = fc;
            continue;
        }
        for i in 1..3 {
            pts[i] = lerp(pts[0], pts[i], opts.shrink);
            vals[i] = eval(pts[i]);
        }
    }

    let best = (0..3).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    SimplexResult { x: pts[best], f: vals[best], iters, converged }
}
