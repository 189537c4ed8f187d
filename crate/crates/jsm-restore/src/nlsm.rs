//! Nonlocal statistics: block matching, group transforms and shrinkage.
//!
//! Every reference block on a stride grid is matched with its most
//! similar neighbors inside a search window; each group is sent through
//! an orthonormal 3D transform (2D DCT per block, partial Haar across
//! the group). The l1 norm of all coefficients is the nonlocal
//! regularizer, its prox is soft thresholding followed by the synthesis
//! operator: inverse transforms and uniform averaging of overlapping
//! block estimates.
//!
//! Group work is embarrassingly parallel; per-group results are produced
//! independently and reduced in canonical raster order, so outputs are
//! bit-identical for any thread count.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exec;
use crate::image::ImageBuffer;

/// Block-matching and grouping geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NlsmParams {
    /// Block side length in pixels.
    pub block: usize,
    /// Distance between adjacent reference blocks.
    pub stride: usize,
    /// Search window side length, centered on the reference block.
    pub window: usize,
    /// Blocks per group, reference included.
    pub group_size: usize,
}

impl Default for NlsmParams {
    fn default() -> Self {
        Self {
            block: 8,
            stride: 4,
            window: 40,
            group_size: 10,
        }
    }
}

impl NlsmParams {
    pub fn validate_for(&self, width: usize, height: usize) -> Result<()> {
        if self.block == 0 || self.stride == 0 || self.window == 0 || self.group_size == 0 {
            return Err(Error::InvalidParameter(
                "block, stride, window and group size must be positive".into(),
            ));
        }
        if self.stride > self.block {
            return Err(Error::InvalidParameter(format!(
                "stride {} exceeds block {}",
                self.stride, self.block
            )));
        }
        if self.block > self.window {
            return Err(Error::InvalidParameter(format!(
                "block {} exceeds search window {}",
                self.block, self.window
            )));
        }
        if self.window > width.min(height) {
            return Err(Error::InvalidParameter(format!(
                "search window {} exceeds image side {}",
                self.window,
                width.min(height)
            )));
        }
        Ok(())
    }

    /// Coefficients per group.
    pub fn group_len(&self) -> usize {
        self.block * self.block * self.group_size
    }
}

/// One matched group: the reference position followed by its matches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupIndex {
    /// Top-left corner of the reference block; always `members[0]`.
    pub ref_pos: (usize, usize),
    /// Block positions in match order, reference first.
    pub members: Vec<(usize, usize)>,
}

/// The full grouping of an image plus per-pixel coverage counts.
#[derive(Debug, Clone)]
pub struct GroupingPlan {
    groups: Vec<GroupIndex>,
    coverage: Vec<f64>,
    width: usize,
    height: usize,
    block: usize,
    group_size: usize,
}

impl GroupingPlan {
    pub fn groups(&self) -> &[GroupIndex] {
        &self.groups
    }

    /// How many member blocks cover each pixel.
    pub fn coverage(&self) -> &[f64] {
        &self.coverage
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    /// Total transform-coefficient count K.
    pub fn coeff_len(&self) -> usize {
        self.groups.len() * self.block * self.block * self.group_size
    }

    pub fn pixel_len(&self) -> usize {
        self.width * self.height
    }
}

/// Concatenated 3D-transform coefficients of all groups, in canonical
/// group order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffVector {
    values: Vec<f64>,
}

impl CoeffVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }
}

/// Reference block positions: stride multiples in each axis plus a final
/// position flush with the border, in raster order.
pub fn reference_positions(
    width: usize,
    height: usize,
    p: &NlsmParams,
) -> Result<Vec<(usize, usize)>> {
    if width < p.block || height < p.block {
        return Err(Error::InvalidParameter(format!(
            "{}x{} image is smaller than a {} block",
            width, height, p.block
        )));
    }
    let rows = axis_positions(height, p.block, p.stride);
    let cols = axis_positions(width, p.block, p.stride);
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            out.push((r, c));
        }
    }
    Ok(out)
}

fn axis_positions(len: usize, block: usize, stride: usize) -> Vec<usize> {
    let last = len - block;
    let mut positions: Vec<usize> = (0..=last / stride).map(|k| k * stride).collect();
    if *positions.last().expect("at least position 0") != last {
        positions.push(last);
    }
    positions
}

/// Squared Euclidean distance between two blocks, abandoning the scan as
/// soon as the partial sum strictly exceeds `cutoff` (a strict compare
/// keeps exact-tie candidates alive for the raster tie-break).
fn block_ssd(
    img: &ImageBuffer,
    a: (usize, usize),
    b: (usize, usize),
    block: usize,
    cutoff: f64,
) -> f64 {
    let mut acc = 0.0;
    for dr in 0..block {
        let ra = &img.row(a.0 + dr)[a.1..a.1 + block];
        let rb = &img.row(b.0 + dr)[b.1..b.1 + block];
        for (x, y) in ra.iter().zip(rb) {
            let d = x - y;
            acc += d * d;
        }
        if acc > cutoff {
            return acc;
        }
    }
    acc
}

/// Precomputed 2x2 pixel sums. For blocks on the aggregated grid,
/// `sum of (coarse difference)^2 / 4` lower-bounds the true block SSD
/// (Cauchy-Schwarz per cell), which rejects most candidates after a
/// quarter of the work.
struct CoarseSums {
    width: usize,
    data: Vec<f64>,
}

impl CoarseSums {
    fn new(img: &ImageBuffer) -> Self {
        let (w, h) = (img.width(), img.height());
        let cw = w.saturating_sub(1);
        let ch = h.saturating_sub(1);
        let mut data = vec![0.0; cw * ch];
        for r in 0..ch {
            let top = img.row(r);
            let bottom = img.row(r + 1);
            let row = &mut data[r * cw..(r + 1) * cw];
            for c in 0..cw {
                row[c] = top[c] + top[c + 1] + bottom[c] + bottom[c + 1];
            }
        }
        Self { width: cw, data }
    }

    /// Lower bound on the SSD between the blocks at `a` and `b`; `block`
    /// must be even and both blocks fully inside the image.
    fn ssd_lower_bound(&self, a: (usize, usize), b: (usize, usize), block: usize) -> f64 {
        let mut acc = 0.0;
        for dr in (0..block).step_by(2) {
            let ra = &self.data[(a.0 + dr) * self.width + a.1..];
            let rb = &self.data[(b.0 + dr) * self.width + b.1..];
            for dc in (0..block).step_by(2) {
                let d = ra[dc] - rb[dc];
                acc += d * d;
            }
        }
        0.25 * acc
    }
}

/// Candidate scan order: concentric rings around the reference so that
/// close (usually similar) blocks tighten the rejection cutoff early.
/// Selection is order-independent; only speed depends on this.
fn ring_offsets(radius: usize) -> Vec<(isize, isize)> {
    let radius = radius as isize;
    let mut offsets = Vec::with_capacity(((2 * radius + 1) * (2 * radius + 1)) as usize);
    offsets.push((0, 0));
    for ring in 1..=radius {
        for c in -ring..=ring {
            offsets.push((-ring, c));
            offsets.push((ring, c));
        }
        for r in -ring + 1..ring {
            offsets.push((r, -ring));
            offsets.push((r, ring));
        }
    }
    offsets
}

struct MatchContext {
    coarse: Option<CoarseSums>,
    offsets: Vec<(isize, isize)>,
}

impl MatchContext {
    fn new(img: &ImageBuffer, p: &NlsmParams) -> Self {
        let radius = p.window.saturating_sub(p.block) / 2;
        Self {
            coarse: (p.block % 2 == 0).then(|| CoarseSums::new(img)),
            offsets: ring_offsets(radius),
        }
    }
}

/// Finds the `group_size` blocks most similar to the reference inside
/// the search window. Candidates step one pixel, distances tie-break in
/// raster order, and the reference always heads the group.
pub fn match_blocks(
    img: &ImageBuffer,
    ref_pos: (usize, usize),
    p: &NlsmParams,
) -> Result<GroupIndex> {
    match_blocks_with(img, ref_pos, p, &MatchContext::new(img, p))
}

fn match_blocks_with(
    img: &ImageBuffer,
    ref_pos: (usize, usize),
    p: &NlsmParams,
    ctx: &MatchContext,
) -> Result<GroupIndex> {
    let block = p.block;
    let (w, h) = (img.width(), img.height());
    debug_assert!(ref_pos.0 + block <= h && ref_pos.1 + block <= w);

    let radius = p.window.saturating_sub(block) / 2;
    let r_lo = ref_pos.0.saturating_sub(radius);
    let r_hi = (ref_pos.0 + radius).min(h - block);
    let c_lo = ref_pos.1.saturating_sub(radius);
    let c_hi = (ref_pos.1 + radius).min(w - block);

    let available = (r_hi - r_lo + 1) * (c_hi - c_lo + 1);
    if available < p.group_size {
        return Err(Error::TooFewCandidates {
            found: available,
            needed: p.group_size,
        });
    }

    let keep = p.group_size - 1;
    let mut best: Vec<(f64, usize, usize)> = Vec::with_capacity(keep + 1);
    if keep > 0 {
        for &(dr, dc) in &ctx.offsets {
            let r = ref_pos.0 as isize + dr;
            let c = ref_pos.1 as isize + dc;
            if r < r_lo as isize || r > r_hi as isize || c < c_lo as isize || c > c_hi as isize {
                continue;
            }
            let (r, c) = (r as usize, c as usize);
            if (r, c) == ref_pos {
                continue;
            }
            let cutoff = if best.len() == keep {
                best[keep - 1].0
            } else {
                f64::INFINITY
            };
            if let Some(coarse) = &ctx.coarse {
                if coarse.ssd_lower_bound(ref_pos, (r, c), block) > cutoff {
                    continue;
                }
            }
            let d = block_ssd(img, ref_pos, (r, c), block, cutoff);
            if d > cutoff {
                continue;
            }
            let pos = best.partition_point(|&(bd, br, bc)| (bd, br, bc) < (d, r, c));
            if pos >= keep {
                continue;
            }
            best.insert(pos, (d, r, c));
            best.truncate(keep);
        }
    }

    let mut members = Vec::with_capacity(p.group_size);
    members.push(ref_pos);
    members.extend(best.iter().map(|&(_, r, c)| (r, c)));
    Ok(GroupIndex { ref_pos, members })
}

/// Orthonormal per-group transform: 2D DCT-II over each block, then the
/// partial Haar transform along the group axis.
struct Transform3d {
    block: usize,
    group: usize,
    /// DCT matrix, row-major `dct[k * block + n]`.
    dct: Vec<f64>,
    /// Band lengths the Haar recursion visits: the approximation band is
    /// halved while its length stays even.
    haar_levels: Vec<usize>,
}

impl Transform3d {
    fn new(block: usize, group: usize) -> Self {
        let b = block as f64;
        let mut dct = vec![0.0; block * block];
        for k in 0..block {
            let scale = if k == 0 { (1.0 / b).sqrt() } else { (2.0 / b).sqrt() };
            for n in 0..block {
                dct[k * block + n] =
                    scale * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2.0 * b)).cos();
            }
        }
        let mut haar_levels = Vec::new();
        let mut len = group;
        while len >= 2 && len % 2 == 0 {
            haar_levels.push(len);
            len /= 2;
        }
        Self {
            block,
            group,
            dct,
            haar_levels,
        }
    }

    fn len(&self) -> usize {
        self.block * self.block * self.group
    }

    /// `T X T^t` for one row-major block, via `scratch` of block^2.
    fn dct2(&self, data: &mut [f64], scratch: &mut [f64]) {
        let b = self.block;
        for k in 0..b {
            for j in 0..b {
                let mut acc = 0.0;
                for n in 0..b {
                    acc += self.dct[k * b + n] * data[n * b + j];
                }
                scratch[k * b + j] = acc;
            }
        }
        for k in 0..b {
            for l in 0..b {
                let mut acc = 0.0;
                for j in 0..b {
                    acc += scratch[k * b + j] * self.dct[l * b + j];
                }
                data[k * b + l] = acc;
            }
        }
    }

    /// `T^t Y T`, the exact inverse of [`Self::dct2`].
    fn idct2(&self, data: &mut [f64], scratch: &mut [f64]) {
        let b = self.block;
        for n in 0..b {
            for j in 0..b {
                let mut acc = 0.0;
                for k in 0..b {
                    acc += self.dct[k * b + n] * data[k * b + j];
                }
                scratch[n * b + j] = acc;
            }
        }
        for n in 0..b {
            for m in 0..b {
                let mut acc = 0.0;
                for j in 0..b {
                    acc += scratch[n * b + j] * self.dct[j * b + m];
                }
                data[n * b + m] = acc;
            }
        }
    }

    fn haar_forward(&self, column: &mut [f64], scratch: &mut [f64]) {
        for &len in &self.haar_levels {
            let half = len / 2;
            for i in 0..half {
                let a = column[2 * i];
                let b = column[2 * i + 1];
                scratch[i] = (a + b) * std::f64::consts::FRAC_1_SQRT_2;
                scratch[half + i] = (a - b) * std::f64::consts::FRAC_1_SQRT_2;
            }
            column[..len].copy_from_slice(&scratch[..len]);
        }
    }

    fn haar_inverse(&self, column: &mut [f64], scratch: &mut [f64]) {
        for &len in self.haar_levels.iter().rev() {
            let half = len / 2;
            for i in 0..half {
                let a = column[i];
                let d = column[half + i];
                scratch[2 * i] = (a + d) * std::f64::consts::FRAC_1_SQRT_2;
                scratch[2 * i + 1] = (a - d) * std::f64::consts::FRAC_1_SQRT_2;
            }
            column[..len].copy_from_slice(&scratch[..len]);
        }
    }

    /// In-place forward transform of a member-major group buffer.
    fn forward(&self, data: &mut [f64]) {
        debug_assert_eq!(data.len(), self.len());
        let b2 = self.block * self.block;
        let mut scratch = vec![0.0; b2.max(self.group)];
        for member in data.chunks_exact_mut(b2) {
            self.dct2(member, &mut scratch);
        }
        let mut column = vec![0.0; self.group];
        for pixel in 0..b2 {
            for m in 0..self.group {
                column[m] = data[m * b2 + pixel];
            }
            self.haar_forward(&mut column, &mut scratch);
            for m in 0..self.group {
                data[m * b2 + pixel] = column[m];
            }
        }
    }

    /// Exact inverse of [`Self::forward`].
    fn inverse(&self, data: &mut [f64]) {
        debug_assert_eq!(data.len(), self.len());
        let b2 = self.block * self.block;
        let mut scratch = vec![0.0; b2.max(self.group)];
        let mut column = vec![0.0; self.group];
        for pixel in 0..b2 {
            for m in 0..self.group {
                column[m] = data[m * b2 + pixel];
            }
            self.haar_inverse(&mut column, &mut scratch);
            for m in 0..self.group {
                data[m * b2 + pixel] = column[m];
            }
        }
        for member in data.chunks_exact_mut(b2) {
            self.idct2(member, &mut scratch);
        }
    }
}

/// Forward 3D transform of one group, laid out member-major: the pixels
/// of member 0 (row-major), then member 1, and so on.
pub fn forward_3d(group_pixels: &[f64], block: usize, group_size: usize) -> Vec<f64> {
    let t = Transform3d::new(block, group_size);
    assert_eq!(group_pixels.len(), t.len(), "group buffer length");
    let mut out = group_pixels.to_vec();
    t.forward(&mut out);
    out
}

/// Exact inverse of [`forward_3d`].
pub fn inverse_3d(coeffs: &[f64], block: usize, group_size: usize) -> Vec<f64> {
    let t = Transform3d::new(block, group_size);
    assert_eq!(coeffs.len(), t.len(), "coefficient buffer length");
    let mut out = coeffs.to_vec();
    t.inverse(&mut out);
    out
}

fn gather_group(img: &ImageBuffer, members: &[(usize, usize)], block: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(members.len() * block * block);
    for &(r0, c0) in members {
        for dr in 0..block {
            out.extend_from_slice(&img.row(r0 + dr)[c0..c0 + block]);
        }
    }
    out
}

fn run_map<T: Send>(n: usize, seq: bool, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if seq {
        exec::map_indexed_seq(n, f)
    } else {
        exec::map_indexed(n, f)
    }
}

fn analyze_impl(
    img: &ImageBuffer,
    p: &NlsmParams,
    seq: bool,
) -> Result<(GroupingPlan, CoeffVector)> {
    p.validate_for(img.width(), img.height())?;
    let refs = reference_positions(img.width(), img.height(), p)?;
    let transform = Transform3d::new(p.block, p.group_size);
    let ctx = MatchContext::new(img, p);

    let per_group = run_map(refs.len(), seq, |i| -> Result<(GroupIndex, Vec<f64>)> {
        let group = match_blocks_with(img, refs[i], p, &ctx)?;
        let mut data = gather_group(img, &group.members, p.block);
        transform.forward(&mut data);
        Ok((group, data))
    });

    let mut groups = Vec::with_capacity(refs.len());
    let mut values = Vec::with_capacity(refs.len() * p.group_len());
    for item in per_group {
        let (group, coeffs) = item?;
        groups.push(group);
        values.extend_from_slice(&coeffs);
    }

    let mut coverage = vec![0.0; img.len()];
    for group in &groups {
        for &(r0, c0) in &group.members {
            for dr in 0..p.block {
                for v in &mut coverage[(r0 + dr) * img.width() + c0..][..p.block] {
                    *v += 1.0;
                }
            }
        }
    }
    debug_assert!(coverage.iter().all(|&c| c >= 1.0), "uncovered pixel");

    Ok((
        GroupingPlan {
            groups,
            coverage,
            width: img.width(),
            height: img.height(),
            block: p.block,
            group_size: p.group_size,
        },
        CoeffVector { values },
    ))
}

/// Builds the grouping plan on `img` and its transform coefficients.
pub fn analyze(img: &ImageBuffer, p: &NlsmParams) -> Result<(GroupingPlan, CoeffVector)> {
    analyze_impl(img, p, false)
}

/// Single-threaded twin of [`analyze`]; bit-identical by construction.
pub fn analyze_seq(img: &ImageBuffer, p: &NlsmParams) -> Result<(GroupingPlan, CoeffVector)> {
    analyze_impl(img, p, true)
}

fn coeffs_impl(img: &ImageBuffer, plan: &GroupingPlan, seq: bool) -> CoeffVector {
    assert!(
        img.width() == plan.width && img.height() == plan.height,
        "image does not match the plan"
    );
    let transform = Transform3d::new(plan.block, plan.group_size);
    let per_group = run_map(plan.groups.len(), seq, |i| {
        let mut data = gather_group(img, &plan.groups[i].members, plan.block);
        transform.forward(&mut data);
        data
    });
    let mut values = Vec::with_capacity(plan.coeff_len());
    for chunk in per_group {
        values.extend_from_slice(&chunk);
    }
    CoeffVector { values }
}

/// Transform coefficients of an arbitrary image under a fixed plan.
pub fn coeffs_with_plan(img: &ImageBuffer, plan: &GroupingPlan) -> CoeffVector {
    coeffs_impl(img, plan, false)
}

fn synthesize_impl(plan: &GroupingPlan, coeffs: &[f64], seq: bool) -> ImageBuffer {
    assert_eq!(coeffs.len(), plan.coeff_len(), "coefficient length");
    let transform = Transform3d::new(plan.block, plan.group_size);
    let chunk = plan.block * plan.block * plan.group_size;
    let estimates = run_map(plan.groups.len(), seq, |i| {
        let mut data = coeffs[i * chunk..(i + 1) * chunk].to_vec();
        transform.inverse(&mut data);
        data
    });

    let mut acc = vec![0.0; plan.pixel_len()];
    for (group, estimate) in plan.groups.iter().zip(&estimates) {
        let mut offset = 0;
        for &(r0, c0) in &group.members {
            for dr in 0..plan.block {
                let row = &mut acc[(r0 + dr) * plan.width + c0..][..plan.block];
                for (dst, src) in row.iter_mut().zip(&estimate[offset..offset + plan.block]) {
                    *dst += src;
                }
                offset += plan.block;
            }
        }
    }
    for (v, &cov) in acc.iter_mut().zip(&plan.coverage) {
        *v /= cov;
    }
    ImageBuffer::new(plan.width, plan.height, acc).expect("synthesis preserves dimensions")
}

/// The synthesis operator: inverse-transforms every group, scatters the
/// block estimates back and averages overlaps uniformly.
pub fn synthesize(plan: &GroupingPlan, coeffs: &CoeffVector) -> ImageBuffer {
    synthesize_impl(plan, &coeffs.values, false)
}

/// Nonlocal regularizer: l1 norm of the group transform coefficients.
pub fn psi_nlsm(img: &ImageBuffer, p: &NlsmParams) -> Result<f64> {
    let (_, coeffs) = analyze(img, p)?;
    Ok(coeffs.l1_norm())
}

/// Component-wise soft threshold `sgn(v) * max(|v| - t, 0)`.
pub fn soft(values: &[f64], t: f64) -> Vec<f64> {
    assert!(t >= 0.0, "threshold {t} must be non-negative");
    values.iter().map(|&v| soft1(v, t)).collect()
}

fn soft1(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// How the x-subproblem threshold is derived from `rho = alpha * K / N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShrinkRule {
    /// Threshold at `sqrt(2 * rho)`.
    #[default]
    Sqrt2Rho,
    /// Threshold at `rho`, the plain l1 prox; exposed for study.
    Rho,
}

impl ShrinkRule {
    pub fn threshold(self, rho: f64) -> f64 {
        match self {
            ShrinkRule::Sqrt2Rho => (2.0 * rho).sqrt(),
            ShrinkRule::Rho => rho,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShrinkRule::Sqrt2Rho => "sqrt2rho",
            ShrinkRule::Rho => "rho",
        }
    }
}

impl FromStr for ShrinkRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt2rho" => Ok(ShrinkRule::Sqrt2Rho),
            "rho" => Ok(ShrinkRule::Rho),
            other => Err(Error::InvalidParameter(format!(
                "unknown shrink rule `{other}` (expected sqrt2rho | rho)"
            ))),
        }
    }
}

pub(crate) struct ProxOutcome {
    pub x: ImageBuffer,
    pub var_e: f64,
    pub var_theta: f64,
}

/// Full x-subproblem step with an optional transform-domain variance
/// diagnostic; a single matching pass serves both.
pub(crate) fn prox_nlsm_step(
    r: &ImageBuffer,
    alpha: f64,
    p: &NlsmParams,
    rule: ShrinkRule,
    want_diagnostic: bool,
    seq: bool,
) -> Result<ProxOutcome> {
    assert!(alpha > 0.0, "prox weight {alpha} must be positive");
    let (plan, theta_r) = analyze_impl(r, p, seq)?;
    let rho = alpha * plan.coeff_len() as f64 / r.len() as f64;
    let threshold = rule.threshold(rho);
    let theta_hat = soft(&theta_r.values, threshold);
    let x = synthesize_impl(&plan, &theta_hat, seq);

    let (var_e, var_theta) = if want_diagnostic {
        let theta_x = coeffs_impl(&x, &plan, seq);
        (
            mean_square_diff(x.data(), r.data()),
            mean_square_diff(&theta_x.values, &theta_r.values),
        )
    } else {
        (0.0, 0.0)
    };
    Ok(ProxOutcome { x, var_e, var_theta })
}

fn mean_square_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Prox of `alpha * psi_nlsm` at `r`: rebuilds the grouping on `r`,
/// soft-thresholds its coefficients at the rule's threshold and
/// synthesizes the estimate.
pub fn prox_nlsm(r: &ImageBuffer, alpha: f64, p: &NlsmParams) -> Result<ImageBuffer> {
    prox_nlsm_with(r, alpha, p, ShrinkRule::default())
}

/// [`prox_nlsm`] with an explicit shrink rule.
pub fn prox_nlsm_with(
    r: &ImageBuffer,
    alpha: f64,
    p: &NlsmParams,
    rule: ShrinkRule,
) -> Result<ImageBuffer> {
    Ok(prox_nlsm_step(r, alpha, p, rule, false, false)?.x)
}

/// Single-threaded twin of [`prox_nlsm`]; bit-identical by construction.
pub fn prox_nlsm_seq(r: &ImageBuffer, alpha: f64, p: &NlsmParams) -> Result<ImageBuffer> {
    Ok(prox_nlsm_step(r, alpha, p, ShrinkRule::default(), false, true)?.x)
}

/// Per-pixel and per-coefficient variances of `x - r`, both coefficient
/// vectors taken under the grouping plan computed on `r`. Close values
/// are the evidence that soft thresholding in the transform domain
/// solves the image-domain subproblem.
pub fn variance_diagnostic(
    x: &ImageBuffer,
    r: &ImageBuffer,
    p: &NlsmParams,
) -> Result<(f64, f64)> {
    if !x.same_dims(r) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} against {}x{}",
            x.width(),
            x.height(),
            r.width(),
            r.height()
        )));
    }
    let (plan, theta_r) = analyze(r, p)?;
    let theta_x = coeffs_with_plan(x, &plan);
    Ok((
        mean_square_diff(x.data(), r.data()),
        mean_square_diff(&theta_x.values, &theta_r.values),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn random_image(w: usize, h: usize, seed: u64) -> ImageBuffer {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::from_fn(w, h, |_, _| rng.random::<f64>() * 255.0)
    }

    fn small_params() -> NlsmParams {
        NlsmParams {
            block: 4,
            stride: 2,
            window: 12,
            group_size: 4,
        }
    }

    #[test]
    fn positions_single_block() {
        let p = NlsmParams {
            block: 8,
            stride: 4,
            window: 8,
            group_size: 1,
        };
        assert_eq!(reference_positions(8, 8, &p).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn positions_grid_and_flush_edge() {
        assert_eq!(axis_positions(12, 8, 4), vec![0, 4]);
        assert_eq!(axis_positions(13, 8, 4), vec![0, 4, 5]);
        assert_eq!(axis_positions(256, 8, 4), {
            let v: Vec<usize> = (0..=62).map(|k| k * 4).collect();
            v
        });
    }

    #[test]
    fn positions_reject_small_images() {
        let p = NlsmParams::default();
        assert!(reference_positions(4, 4, &p).is_err());
    }

    #[test]
    fn matching_on_constant_image_tie_breaks_in_raster_order() {
        let img = ImageBuffer::from_fn(16, 16, |_, _| 42.0);
        let p = NlsmParams {
            block: 4,
            stride: 4,
            window: 8,
            group_size: 4,
        };
        let group = match_blocks(&img, (4, 4), &p).unwrap();
        assert_eq!(group.members, vec![(4, 4), (2, 2), (2, 3), (2, 4)]);
    }

    #[test]
    fn matching_ranks_an_identical_block_second() {
        let mut img = random_image(20, 20, 9);
        let p = NlsmParams {
            block: 4,
            stride: 4,
            window: 16,
            group_size: 3,
        };
        // Copy the reference block at (8,8) to (2, 12).
        for dr in 0..4 {
            for dc in 0..4 {
                let v = img[(8 + dr, 8 + dc)];
                img[(2 + dr, 12 + dc)] = v;
            }
        }
        let group = match_blocks(&img, (8, 8), &p).unwrap();
        assert_eq!(group.members[0], (8, 8));
        assert_eq!(group.members[1], (2, 12));
    }

    #[test]
    fn matching_rejects_windows_with_too_few_candidates() {
        let img = ImageBuffer::from_fn(8, 8, |_, _| 0.0);
        let p = NlsmParams {
            block: 8,
            stride: 8,
            window: 8,
            group_size: 2,
        };
        assert!(matches!(
            match_blocks(&img, (0, 0), &p),
            Err(Error::TooFewCandidates { found: 1, needed: 2 })
        ));
    }

    #[test]
    fn matching_agrees_with_exhaustive_sort() {
        for seed in 0..6 {
            let img = random_image(24, 24, 100 + seed);
            let p = small_params();
            for &ref_pos in &[(0, 0), (6, 10), (20, 20), (10, 3)] {
                let fast = match_blocks(&img, ref_pos, &p).unwrap();

                let radius = (p.window - p.block) / 2;
                let r_lo = ref_pos.0.saturating_sub(radius);
                let r_hi = (ref_pos.0 + radius).min(24 - p.block);
                let c_lo = ref_pos.1.saturating_sub(radius);
                let c_hi = (ref_pos.1 + radius).min(24 - p.block);
                let mut scored = Vec::new();
                for r in r_lo..=r_hi {
                    for c in c_lo..=c_hi {
                        if (r, c) == ref_pos {
                            continue;
                        }
                        let d = block_ssd(&img, ref_pos, (r, c), p.block, f64::INFINITY);
                        scored.push((d, r, c));
                    }
                }
                scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut expected = vec![ref_pos];
                expected.extend(scored[..p.group_size - 1].iter().map(|&(_, r, c)| (r, c)));
                assert_eq!(fast.members, expected, "seed {seed} at {ref_pos:?}");
            }
        }
    }

    #[test]
    fn transform_round_trips_and_preserves_energy() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for &(block, group) in &[(2usize, 3usize), (4, 10), (8, 10), (4, 8)] {
            let data: Vec<f64> = (0..block * block * group)
                .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                .collect();
            let coeffs = forward_3d(&data, block, group);
            let back = inverse_3d(&coeffs, block, group);
            for (a, b) in back.iter().zip(&data) {
                assert!((a - b).abs() < 1e-10);
            }
            let e_in: f64 = data.iter().map(|v| v * v).sum();
            let e_out: f64 = coeffs.iter().map(|v| v * v).sum();
            assert!((e_in - e_out).abs() < 1e-10 * e_in.max(1.0));
        }
    }

    #[test]
    fn transform_of_zero_is_zero() {
        let coeffs = forward_3d(&vec![0.0; 4 * 4 * 10], 4, 10);
        assert!(coeffs.iter().all(|&v| v == 0.0));
        let back = inverse_3d(&vec![0.0; 4 * 4 * 10], 4, 10);
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_group_concentrates_on_dc_approximation_band() {
        // A constant group of value c under block 8, C = 10: the per-block
        // DC is 8c, one Haar level leaves five approximation entries of
        // sqrt(2) * 8c; total energy (8c)^2 * 10.
        let c = 3.0;
        let coeffs = forward_3d(&vec![c; 8 * 8 * 10], 8, 10);
        let expected = std::f64::consts::SQRT_2 * 8.0 * c;
        for (i, &v) in coeffs.iter().enumerate() {
            let member = i / 64;
            let pixel = i % 64;
            if pixel == 0 && member < 5 {
                assert!((v - expected).abs() < 1e-10, "index {i}: {v}");
            } else {
                assert!(v.abs() < 1e-10, "index {i}: {v}");
            }
        }
        let norm = coeffs.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 8.0 * c * 10.0_f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn analyze_reports_the_documented_coefficient_count() {
        let img = random_image(64, 64, 3);
        let p = NlsmParams {
            window: 40,
            ..NlsmParams::default()
        };
        let (plan, coeffs) = analyze(&img, &p).unwrap();
        // 15 positions per axis at stride 4 for side 64.
        assert_eq!(plan.groups().len(), 15 * 15);
        assert_eq!(coeffs.len(), 8 * 8 * 10 * 225);
        assert_eq!(coeffs.len(), plan.coeff_len());
    }

    #[test]
    fn analyze_of_zero_image_is_zero() {
        let img = ImageBuffer::zeros(24, 24);
        let (_, coeffs) = analyze(&img, &small_params()).unwrap();
        assert!(coeffs.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn analyze_is_a_per_group_isometry() {
        let img = random_image(24, 24, 8);
        let p = small_params();
        let (plan, coeffs) = analyze(&img, &p).unwrap();
        let chunk = p.group_len();
        for (i, group) in plan.groups().iter().enumerate() {
            let gathered = gather_group(&img, &group.members, p.block);
            let e_pixels: f64 = gathered.iter().map(|v| v * v).sum();
            let e_coeffs: f64 = coeffs.values()[i * chunk..(i + 1) * chunk]
                .iter()
                .map(|v| v * v)
                .sum();
            assert!((e_pixels - e_coeffs).abs() < 1e-8 * e_pixels.max(1.0));
        }
    }

    #[test]
    fn psi_nlsm_is_homogeneous() {
        let img = random_image(24, 24, 21);
        let doubled = img.map(|v| 2.0 * v);
        let p = small_params();
        let a = psi_nlsm(&img, &p).unwrap();
        let b = psi_nlsm(&doubled, &p).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-6 * a);
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft(&[3.0], 1.0), vec![2.0]);
        assert_eq!(soft(&[-0.5], 1.0), vec![0.0]);
        let v = [1.5, -2.0, 0.0, 7.25];
        assert_eq!(soft(&v, 0.0), v.to_vec());
        assert_eq!(soft(&[-3.0], 1.0), vec![-2.0]);
    }

    #[test]
    fn synthesis_of_untouched_coefficients_reproduces_the_image() {
        let img = random_image(24, 24, 12);
        let (plan, coeffs) = analyze(&img, &small_params()).unwrap();
        let back = synthesize(&plan, &coeffs);
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn prox_with_vanishing_weight_is_identity() {
        let img = random_image(24, 24, 13);
        // Under the plain l1 rule the threshold scales linearly with
        // alpha, so 1e-12 leaves the coefficients effectively untouched.
        let out = prox_nlsm_with(&img, 1e-12, &small_params(), ShrinkRule::Rho).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-8);
        }
        // The square-root rule keeps a threshold-sized residue.
        let (plan, _) = analyze(&img, &small_params()).unwrap();
        let t = ShrinkRule::Sqrt2Rho.threshold(1e-12 * plan.coeff_len() as f64 / img.len() as f64);
        let out = prox_nlsm(&img, 1e-12, &small_params()).unwrap();
        let worst = out
            .data()
            .iter()
            .zip(img.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 40.0 * t, "residue {worst} vs threshold {t}");
    }

    #[test]
    fn prox_shrinks_a_constant_image_by_exactly_the_threshold_share() {
        // Every group of a constant image holds one coefficient at the
        // Haar root, c * block * sqrt(C) for dyadic C; soft thresholding
        // shifts it by t, so the output is the uniformly shrunk constant
        // c - t / (block * sqrt(C)).
        let c = 100.0;
        let img = ImageBuffer::from_fn(24, 24, |_, _| c);
        let p = small_params();
        let alpha = 1.0;
        let (plan, _) = analyze(&img, &p).unwrap();
        let rho = alpha * plan.coeff_len() as f64 / img.len() as f64;
        let t = ShrinkRule::Sqrt2Rho.threshold(rho);
        let root = c * p.block as f64 * (p.group_size as f64).sqrt();
        assert!(root > t, "the root coefficient must survive");
        let expected = c - t / (p.block as f64 * (p.group_size as f64).sqrt());
        let out = prox_nlsm(&img, alpha, &p).unwrap();
        for &v in out.data() {
            assert!((v - expected).abs() < 1e-10, "{v} vs {expected}");
        }
    }

    #[test]
    fn prox_objective_never_worse_than_input_in_coefficient_domain() {
        let img = random_image(24, 24, 14);
        let p = small_params();
        let alpha = 2.0;
        let (plan, theta_r) = analyze(&img, &p).unwrap();
        let rho = alpha * plan.coeff_len() as f64 / img.len() as f64;
        let threshold = ShrinkRule::Sqrt2Rho.threshold(rho);
        let theta_hat = soft(theta_r.values(), threshold);
        let objective = |theta: &[f64]| -> f64 {
            let fid: f64 = theta
                .iter()
                .zip(theta_r.values())
                .map(|(&a, &b)| 0.5 * (a - b) * (a - b))
                .sum();
            fid + rho * theta.iter().map(|v| v.abs()).sum::<f64>()
        };
        assert!(objective(&theta_hat) <= objective(theta_r.values()) + 1e-9);
    }

    #[test]
    fn sequential_and_dispatched_paths_are_bit_identical() {
        let img = random_image(32, 32, 15);
        let p = small_params();
        let (plan_a, coeffs_a) = analyze(&img, &p).unwrap();
        let (plan_b, coeffs_b) = analyze_seq(&img, &p).unwrap();
        assert_eq!(coeffs_a.values(), coeffs_b.values());
        assert_eq!(plan_a.groups(), plan_b.groups());
        let xa = prox_nlsm(&img, 0.5, &p).unwrap();
        let xb = prox_nlsm_seq(&img, 0.5, &p).unwrap();
        assert_eq!(xa.data(), xb.data());
    }

    #[test]
    fn variance_diagnostic_is_zero_for_identical_images() {
        let img = random_image(24, 24, 16);
        let (ve, vt) = variance_diagnostic(&img, &img, &small_params()).unwrap();
        assert_eq!(ve, 0.0);
        assert_eq!(vt, 0.0);
    }

    #[test]
    fn shrink_rule_parsing() {
        assert_eq!("sqrt2rho".parse::<ShrinkRule>().unwrap(), ShrinkRule::Sqrt2Rho);
        assert_eq!("rho".parse::<ShrinkRule>().unwrap(), ShrinkRule::Rho);
        assert!("hard".parse::<ShrinkRule>().is_err());
        assert!((ShrinkRule::Sqrt2Rho.threshold(8.0) - 4.0).abs() < 1e-15);
        assert!((ShrinkRule::Rho.threshold(8.0) - 8.0).abs() < 1e-15);
    }
}
