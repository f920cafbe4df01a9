use tensorkit::io::{format_tensor, parse_tensor, read_tensor, write_tensor};
use tensorkit::DenseTensor;

const WORKED_EXAMPLE: &str = include_str!("../../cli/tests/fixtures/worked_example.tns");

#[test]
fn worked_example_round_trips_exactly() {
    let t = parse_tensor(WORKED_EXAMPLE).unwrap();
    assert_eq!(t.shape(), &[3, 4, 2]);
    assert_eq!(t.element(&[2, 3, 1]).unwrap(), 8.0);
    assert_eq!(t.element(&[3, 4, 2]).unwrap(), 24.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.tns");
    write_tensor(&path, &t).unwrap();
    assert_eq!(read_tensor(&path).unwrap(), t);
}

#[test]
fn random_values_survive_the_text_format() {
    let mut rng = tensorkit::random::rng(1);
    let v = tensorkit::random::normal_vector(60, &mut rng);
    let t = DenseTensor::new(vec![3, 4, 5], v.iter().map(|x| x * 1e-5).collect()).unwrap();
    let back = parse_tensor(&format_tensor(&t)).unwrap();
    assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn missing_file_is_an_io_error() {
    let err = read_tensor("/nonexistent/tensor.tns").unwrap_err();
    assert!(matches!(err, tensorkit::Error::Io(_)));
    assert_eq!(err.kind(), tensorkit::ErrorKind::Data);
}
