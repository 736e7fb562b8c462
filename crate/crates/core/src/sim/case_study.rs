use super::Scenario;

/// Three solar-charged nodes over two hours. `rpi2` sits in the shade for the
/// first 80 minutes and `rpi3` loses its sun for the last 20.
pub const CASE_STUDY_JSON: &str = include_str!("../../data/case_study.json");

pub fn case_study() -> Scenario {
    Scenario::from_json(CASE_STUDY_JSON).expect("bundled case study is valid")
}
