use std::ffi::CString;

use footprint_py::footprint_py;
use pyo3::prelude::*;

fn run(code: &str) -> PyResult<()> {
    pyo3::append_to_inittab!(footprint_py);
    Python::initialize();
    Python::attach(|py| py.run(&CString::new(code).unwrap(), None, None))
}

#[test]
fn module_round_trip() {
    run(r#"
import footprint_py as fp
assert fp.categories() == ["FakeNews", "Organizations", "PoliticalAffiliates", "DefaultIndividuals"]
assert abs(fp.cosine_similarity({1: 3}, {1: 1, 2: 0}) - 1.0) < 1e-12
X = [[float(i % 4), float(i % 3)] for i in range(80)]
y = [fp.categories()[i % 4] for i in range(80)]
m = fp.Forest.train(X, y, n_trees=10, seed=1)
assert m.predict(X) == y
assert fp.Forest.from_json(m.to_json()).predict_proba(X[:2]) == m.predict_proba(X[:2])
try:
    fp.gini_impurity([])
except ValueError:
    pass
else:
    raise AssertionError("empty counts accepted")
"#)
    .unwrap();
}
