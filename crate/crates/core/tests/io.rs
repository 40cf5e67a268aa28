use gff2dlab::gff::{FieldSampler, SamplingMethod};
use gff2dlab::io::{decode_field, encode_field, format_points, parse_path, parse_points, FieldSidecar, FormatError};
use gff2dlab::lattice::{WalkModel, Window};
use proptest::prelude::*;

fn sidecar(side: usize) -> FieldSidecar {
    let model = WalkModel::new(4).unwrap();
    let window = Window::torus(side).unwrap();
    FieldSidecar::of(&FieldSampler::new(&model, &window, SamplingMethod::Spectral).unwrap().sample(1, 0))
}

#[test]
fn sidecar_rejects_inconsistent_metadata() {
    let good = sidecar(8);
    let text = serde_json::to_string(&good).unwrap();
    assert_eq!(FieldSidecar::parse(&text).unwrap(), good);
    for (from, to) in [("\"f64le\"", "\"f32le\""), ("\"rows\":8", "\"rows\":9"), ("\"mass_scale\":4", "\"mass_scale\":0")] {
        assert!(matches!(FieldSidecar::parse(&text.replace(from, to)), Err(FormatError::Sidecar(_))), "{from}");
    }
    let extra = text.replacen('{', "{\"colour\":1,", 1);
    assert!(FieldSidecar::parse(&extra).is_err());
}

#[test]
fn non_finite_values_are_rejected() {
    let s = sidecar(4);
    let mut values = vec![0.5; 16];
    values[7] = f64::NAN;
    assert_eq!(decode_field(&encode_field(&values), &s), Err(FormatError::NotFinite { index: 7 }));
}

#[test]
fn out_of_range_coordinates() {
    assert!(parse_points("1099511627777 0").is_err());
    assert_eq!(parse_points("1099511627776 0").unwrap(), vec![[1 << 40, 0]]);
    assert!(matches!(parse_path(""), Err(FormatError::Empty)));
}

proptest! {
    #[test]
    fn points_round_trip(pts in prop::collection::vec((-(1i64 << 40)..=(1 << 40), -(1i64 << 40)..=(1 << 40)), 0..50)) {
        let pts: Vec<[i64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
        prop_assert_eq!(parse_points(&format_points(&pts)).unwrap(), pts);
    }

    #[test]
    fn parser_never_panics(text in "\\PC{0,200}") {
        let _ = parse_points(&text);
        let _ = FieldSidecar::parse(&text);
    }

    #[test]
    fn field_bytes_round_trip(values in prop::collection::vec(-1e6f64..1e6, 16)) {
        let s = sidecar(4);
        let f = decode_field(&encode_field(&values), &s).unwrap();
        prop_assert_eq!(f.values, values);
    }

    #[test]
    fn wrong_lengths_are_rejected(len in 0usize..300) {
        prop_assume!(len != 128);
        let s = sidecar(4);
        let is_length_error = matches!(decode_field(&vec![0u8; len], &s), Err(FormatError::Length { .. }));
        prop_assert!(is_length_error);
    }
}
