use std::fmt;

/// A scored point mask, or a ground-truth instance when the score is ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct PointInstance {
    pub class: usize,
    pub score: f64,
    pub mask: Vec<bool>,
}

/// IoU thresholds averaged into mAP: 0.50, 0.55, ..., 0.95.
pub const AP_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

/// `|a ∧ b| / |a ∨ b|`; 0 when both are empty.
pub fn iou_points(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "masks differ in length");
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// `per_class[c][t]` is AP of class `c` at `AP_THRESHOLDS[t]`; `None` for
    /// classes without ground truth.
    pub per_class: Vec<Option<[f64; 10]>>,
    pub per_class_ap25: Vec<Option<f64>>,
    pub map: f64,
    pub ap50: f64,
    pub ap25: f64,
}

impl EvalReport {
    /// `class,threshold,ap` rows followed by the summary rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,threshold,ap\n");
        for (c, aps) in self.per_class.iter().enumerate() {
            let Some(aps) = aps else { continue };
            if let Some(a) = self.per_class_ap25[c] {
                s += &format!("{c},0.25,{a}\n");
            }
            for (t, a) in AP_THRESHOLDS.iter().zip(aps) {
                s += &format!("{c},{t},{a}\n");
            }
        }
        s += &format!("all,mAP,{}\nall,AP50,{}\nall,AP25,{}\n", self.map, self.ap50, self.ap25);
        s
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>6}  {:>6}  {:>6}  {:>6}", "class", "mAP", "AP50", "AP25")?;
        for (c, aps) in self.per_class.iter().enumerate() {
            match aps {
                Some(aps) => writeln!(
                    f,
                    "{c:>6}  {:>6.3}  {:>6.3}  {:>6.3}",
                    aps.iter().sum::<f64>() / aps.len() as f64,
                    aps[0],
                    self.per_class_ap25[c].unwrap_or(0.0)
                )?,
                None => writeln!(f, "{c:>6}  {:>6}  {:>6}  {:>6}", "-", "-", "-")?,
            }
        }
        write!(
            f,
            "{:>6}  {:>6.3}  {:>6.3}  {:>6.3}",
            "all", self.map, self.ap50, self.ap25
        )
    }
}

/// Interpolated AP of one class at one threshold. Predictions are visited by
/// score (descending), then scene, then rank within the scene.
fn class_ap(preds: &[Vec<PointInstance>], gts: &[Vec<PointInstance>], class: usize, t: f64) -> f64 {
    let n_gt: usize = gts.iter().map(|g| g.iter().filter(|i| i.class == class).count()).sum();
    let mut order: Vec<(usize, usize)> = preds
        .iter()
        .enumerate()
        .flat_map(|(s, p)| {
            p.iter()
                .enumerate()
                .filter(|(_, i)| i.class == class)
                .map(move |(r, _)| (s, r))
        })
        .collect();
    order.sort_by(|a, b| {
        preds[b.0][b.1]
            .score
            .total_cmp(&preds[a.0][a.1].score)
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(order.len());
    let mut recall = Vec::with_capacity(order.len());
    for (k, &(s, r)) in order.iter().enumerate() {
        let mask = &preds[s][r].mask;
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts[s].iter().enumerate() {
            if g.class != class || used[s][j] {
                continue;
            }
            let iou = iou_points(mask, &g.mask);
            if iou >= t && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            used[s][j] = true;
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

/// Scene-aligned evaluation: `preds[s]` and `gts[s]` describe the same scene.
pub fn evaluate(preds: &[Vec<PointInstance>], gts: &[Vec<PointInstance>], n_class: usize) -> EvalReport {
    assert_eq!(
        preds.len(),
        gts.len(),
        "prediction and ground-truth scene counts differ"
    );
    let mut per_class = vec![None; n_class];
    let mut per_class_ap25 = vec![None; n_class];
    for c in 0..n_class {
        if !gts.iter().flatten().any(|g| g.class == c) {
            continue;
        }
        per_class[c] = Some(AP_THRESHOLDS.map(|t| class_ap(preds, gts, c, t)));
        per_class_ap25[c] = Some(class_ap(preds, gts, c, 0.25));
    }
    let present: Vec<_> = per_class.iter().flatten().collect();
    let mean = |xs: Vec<f64>| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    EvalReport {
        map: mean(present.iter().map(|a| a.iter().sum::<f64>() / a.len() as f64).collect()),
        ap50: mean(present.iter().map(|a| a[0]).collect()),
        ap25: mean(per_class_ap25.iter().flatten().copied().collect()),
        per_class,
        per_class_ap25,
    }
}
