//! File formats: ground truth (JSON), detections (JSON Lines) and the
//! evaluation report (JSON, numbers at 6 decimal places).

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};
use crate::harness::dataset::{Annotation, Dataset};
use crate::metrics::EvalReport;
use crate::types::{BBox, ClassLabel, Detection, GroundTruthObject, LabelSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub known_count: u32,
    pub unknown_slots: u32,
    pub annotations: Vec<Annotation>,
}

impl GroundTruthFile {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let space = dataset.eval_label_space();
        Self {
            known_count: space.known,
            unknown_slots: space.unknown,
            annotations: dataset.test_annotations(),
        }
    }

    pub fn label_space(&self) -> LabelSpace {
        LabelSpace::new(self.known_count, self.unknown_slots)
    }

    pub fn objects(&self) -> Vec<GroundTruthObject> {
        self.annotations.iter().map(|a| a.to_ground_truth(self.known_count)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, at: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::Schema(format!("{at}: missing field `{key}`")))
}

fn as_u64(v: &Value, key: &str, at: &str) -> Result<u64> {
    v.as_u64().ok_or_else(|| Error::Schema(format!("{at}: `{key}` must be a non-negative integer, got {v}")))
}

fn as_u32(v: &Value, key: &str, at: &str) -> Result<u32> {
    let n = as_u64(v, key, at)?;
    u32::try_from(n).map_err(|_| Error::Schema(format!("{at}: `{key}` = {n} is too large")))
}

fn as_bbox(v: &Value, at: &str) -> Result<BBox> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 4)
        .ok_or_else(|| Error::Schema(format!("{at}: `bbox` must be [cx, cy, w, h], got {v}")))?;
    let mut c = [0.0; 4];
    for (slot, x) in c.iter_mut().zip(arr) {
        *slot = x
            .as_f64()
            .ok_or_else(|| Error::Schema(format!("{at}: `bbox` entries must be numbers, got {x}")))?;
    }
    BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| Error::Schema(format!("{at}: {e}")))
}

/// Parses a ground-truth file; errors name the first offending annotation.
pub fn parse_ground_truth(text: &str) -> Result<GroundTruthFile> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Schema(format!("ground truth: {e}")))?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::Schema("ground truth: top level must be an object".into()))?;
    let known_count = as_u32(field(obj, "known_count", "ground truth")?, "known_count", "ground truth")?;
    let unknown_slots = as_u32(field(obj, "unknown_slots", "ground truth")?, "unknown_slots", "ground truth")?;
    if known_count == 0 {
        return Err(Error::Schema("ground truth: `known_count` must be at least 1".into()));
    }
    let list = field(obj, "annotations", "ground truth")?
        .as_array()
        .ok_or_else(|| Error::Schema("ground truth: `annotations` must be an array".into()))?;
    let mut annotations = Vec::with_capacity(list.len());
    for (i, rec) in list.iter().enumerate() {
        let at = format!("annotation {i}");
        let rec = rec
            .as_object()
            .ok_or_else(|| Error::Schema(format!("{at}: must be an object")))?;
        annotations.push(Annotation {
            image_id: as_u64(field(rec, "image_id", &at)?, "image_id", &at)?,
            class_id: as_u32(field(rec, "class_id", &at)?, "class_id", &at)?,
            bbox: as_bbox(field(rec, "bbox", &at)?, &at)?,
        });
    }
    Ok(GroundTruthFile {
        known_count,
        unknown_slots,
        annotations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub class_id: u32,
    pub bbox: BBox,
    pub score: f64,
}

impl DetectionRecord {
    pub fn from_detection(d: &Detection) -> Result<Self> {
        let class_id = d
            .label
            .id()
            .ok_or_else(|| Error::InvalidLabel("background detections are not written".into()))?;
        Ok(Self {
            image_id: d.image_id,
            class_id,
            bbox: d.bbox,
            score: d.score,
        })
    }
}

/// Parses JSON Lines detections. Class ids below `C` are known, ids in
/// `[C, C+U)` unknown slots; anything else is a schema error naming the line.
pub fn parse_detections(text: &str, space: &LabelSpace) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = format!("detection line {}", i + 1);
        let v: Value = serde_json::from_str(line).map_err(|e| Error::Schema(format!("{at}: {e}")))?;
        let rec = v
            .as_object()
            .ok_or_else(|| Error::Schema(format!("{at}: must be an object")))?;
        let image_id = as_u64(field(rec, "image_id", &at)?, "image_id", &at)?;
        let class_id = as_u32(field(rec, "class_id", &at)?, "class_id", &at)?;
        let bbox = as_bbox(field(rec, "bbox", &at)?, &at)?;
        let score_v = field(rec, "score", &at)?;
        let score = score_v
            .as_f64()
            .ok_or_else(|| Error::Schema(format!("{at}: `score` must be a number, got {score_v}")))?;
        let label = space.label(class_id).map_err(|e| Error::Schema(format!("{at}: {e}")))?;
        out.push(Detection::new(image_id, label, bbox, score).map_err(|e| Error::Schema(format!("{at}: {e}")))?);
    }
    Ok(out)
}

pub fn detections_to_jsonl(dets: &[Detection]) -> Result<String> {
    let mut s = String::new();
    for d in dets {
        s.push_str(&serde_json::to_string(&DetectionRecord::from_detection(d)?).expect("record serializes"));
        s.push('\n');
    }
    Ok(s)
}

/// Fixed 6-decimal JSON number; `-0.000000` prints as `0.000000`.
pub fn fixed6(x: f64) -> Value {
    let mut s = format!("{x:.6}");
    if s == "-0.000000" {
        s = "0.000000".into();
    }
    Value::Number(s.parse::<Number>().expect("finite value formats as a JSON number"))
}

fn label_id(label: &ClassLabel) -> u32 {
    label.id().unwrap_or(u32::MAX)
}

/// Report object: the metrics, the predicted-to-ground-truth unknown
/// permutation and `config_echo` verbatim.
pub fn report_value(report: &EvalReport, config_echo: Value) -> Value {
    let mut perm = Map::new();
    for (pred, gt) in &report.permutation {
        perm.insert(pred.to_string(), gt.map_or(Value::Null, Value::from));
    }
    let mut m = Map::new();
    m.insert("map_known".into(), fixed6(report.map_known));
    m.insert("wi".into(), fixed6(report.wi));
    m.insert("a_ose".into(), Value::from(report.a_ose));
    m.insert("uc_map".into(), fixed6(report.uc_map));
    m.insert("uc_recall".into(), fixed6(report.uc_recall));
    m.insert("permutation".into(), Value::Object(perm));
    m.insert("config_echo".into(), config_echo);
    Value::Object(m)
}

pub fn report_json(report: &EvalReport, config_echo: Value) -> String {
    let mut s = serde_json::to_string_pretty(&report_value(report, config_echo)).expect("report serializes");
    s.push('\n');
    s
}

/// Sorts detections by image, label, then descending score, so written files
/// do not depend on generation order.
pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        (a.image_id, label_id(&a.label))
            .cmp(&(b.image_id, label_id(&b.label)))
            .then(b.score.total_cmp(&a.score))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    const GT: &str = r#"{"known_count": 2, "unknown_slots": 2, "annotations": [
        {"image_id": 0, "class_id": 1, "bbox": [5, 5, 2, 2]},
        {"image_id": 1, "class_id": 3, "bbox": [5, 5, 2, 2]}]}"#;

    #[test]
    fn ground_truth_round_trip() {
        let f = parse_ground_truth(GT).unwrap();
        let objs = f.objects();
        assert_eq!(objs[0].label, ClassLabel::Known(1));
        assert_eq!(objs[1].label, ClassLabel::Unknown(3));
        assert_eq!(parse_ground_truth(&f.to_json()).unwrap(), f);
    }

    #[test]
    fn ground_truth_errors_name_the_record() {
        let bad = GT.replace("[5, 5, 2, 2]}]", "[5, 5, -2, 2]}]");
        let msg = parse_ground_truth(&bad).unwrap_err().to_string();
        assert!(msg.contains("annotation 1"), "{msg}");
        let missing = GT.replace(r#""class_id": 1, "#, "");
        let msg = parse_ground_truth(&missing).unwrap_err().to_string();
        assert!(msg.contains("annotation 0") && msg.contains("class_id"), "{msg}");
        assert!(matches!(parse_ground_truth("[]"), Err(Error::Schema(_))));
        assert!(matches!(parse_ground_truth("{"), Err(Error::Schema(_))));
    }

    #[test]
    fn detections_round_trip() {
        let space = LabelSpace::new(2, 2);
        let text = "{\"image_id\":0,\"class_id\":0,\"bbox\":[1,1,1,1],\"score\":0.5}\n\n{\"image_id\":3,\"class_id\":3,\"bbox\":[2,2,1,1],\"score\":0.25}\n";
        let dets = parse_detections(text, &space).unwrap();
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[1].label, ClassLabel::Unknown(3));
        assert_eq!(parse_detections(&detections_to_jsonl(&dets).unwrap(), &space).unwrap(), dets);
    }

    #[test]
    fn detection_errors_name_the_line() {
        let space = LabelSpace::new(2, 2);
        let good = "{\"image_id\":0,\"class_id\":0,\"bbox\":[1,1,1,1],\"score\":0.5}\n";
        for bad in [
            "{\"image_id\":0,\"class_id\":4,\"bbox\":[1,1,1,1],\"score\":0.5}",
            "{\"image_id\":0,\"class_id\":0,\"bbox\":[1,1,1,1],\"score\":1.5}",
            "{\"image_id\":0,\"class_id\":0,\"bbox\":[1,1,1],\"score\":0.5}",
            "not json",
        ] {
            let msg = parse_detections(&format!("{good}{bad}\n"), &space).unwrap_err().to_string();
            assert!(msg.contains("line 2"), "{msg}");
        }
    }

    #[test]
    fn report_has_six_decimals() {
        let report = EvalReport {
            map_known: 1.0,
            wi: 1.0 / 3.0,
            wi_undefined: false,
            a_ose: 4,
            uc_map: -0.0,
            uc_recall: 0.5,
            permutation: [(2, Some(3)), (3, None)].into_iter().collect(),
        };
        let s = report_json(&report, Value::Null);
        assert!(s.contains("\"map_known\": 1.000000"));
        assert!(s.contains("\"wi\": 0.333333"));
        assert!(s.contains("\"uc_map\": 0.000000"));
        assert!(s.contains("\"a_ose\": 4"));
        assert!(s.contains("\"2\": 3") && s.contains("\"3\": null"));
    }
}
