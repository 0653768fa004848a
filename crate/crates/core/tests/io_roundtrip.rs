use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rtpr::io::{parse_dataset, write_dataset, FitArtifact, RunConfig};
use rtpr::model::{BatchData, Group};

fn group(id: u32, p: usize, steps: Vec<f64>, ys: Vec<Vec<f64>>, other: Vec<f64>) -> Group {
    let n = steps.len();
    let mut first = Vec::with_capacity(n);
    let mut acc = -1.0;
    for s in steps {
        acc += s;
        first.push(acc);
    }
    let x = DMatrix::from_fn(n, p, |a, l| if l == 0 { first[a] } else { other[a] });
    Group::new(id, x, ys.into_iter().map(DVector::from_vec).collect()).unwrap()
}

fn batch() -> impl Strategy<Value = BatchData> {
    (1usize..=2, 1usize..=3)
        .prop_flat_map(|(p, groups)| {
            prop::collection::vec(
                (2usize..=6, 1usize..=4).prop_flat_map(|(n, j)| {
                    (
                        prop::collection::vec(1e-3f64..1.0, n),
                        prop::collection::vec(prop::collection::vec(-1e3f64..1e3, n), j),
                        prop::collection::vec(-5.0f64..5.0, n),
                    )
                }),
                groups,
            )
            .prop_map(move |gs| {
                let groups =
                    gs.into_iter().enumerate().map(|(i, (s, y, o))| group(i as u32 + 1, p, s, y, o)).collect();
                BatchData::new(groups).unwrap()
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dataset_csv_roundtrip_is_exact(data in batch()) {
        let mut buf = Vec::new();
        write_dataset(&data, &mut buf).unwrap();
        let back = parse_dataset(buf.as_slice()).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn shuffled_rows_parse_to_the_same_batch(data in batch(), seed in any::<u64>()) {
        let mut buf = Vec::new();
        write_dataset(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        let mut s = seed;
        for k in (1..lines.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            lines.swap(k, (s >> 33) as usize % (k + 1));
        }
        let shuffled = format!("{header}\n{}\n", lines.join("\n"));
        prop_assert_eq!(parse_dataset(shuffled.as_bytes()).unwrap(), data);
    }
}

#[test]
fn run_config_toml_roundtrip() {
    let text = "model = \"tp-tp\"\nnu0 = \"estimate\"\nnu1 = \"estimate\"\nseed = 9\nrule_multiplier = 2.5\n";
    let c = RunConfig::parse(text).unwrap();
    assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
}

#[test]
fn artifact_rejects_foreign_schema() {
    let err = FitArtifact::parse("{\"schema\": \"other/1\"}").unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
