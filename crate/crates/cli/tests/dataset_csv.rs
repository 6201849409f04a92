use hetfl::dataset_csv::{load_csv, write_csv, DataFileError};
use hetfl_core::data::synth_blobs;

#[test]
fn two_line_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "0.5,1.0,0\n-2,3e-1,1\n").unwrap();
    let ds = load_csv(&path).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.dims(), 2);
    assert_eq!(ds.class_count(), 2);
    assert_eq!(ds.labels(), &[0, 1]);
    assert_eq!(ds.inputs().row(1), &[-2.0, 0.3]);
}

#[test]
fn non_numeric_cell_names_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "0.5,1.0,0\n0.1,abc,1\n").unwrap();
    match load_csv(&path).unwrap_err() {
        DataFileError::Parse { line, column, value, .. } => {
            assert_eq!((line, column, value.as_str()), (2, 2, "abc"));
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn ragged_rows_and_bad_labels_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "0.5,1.0,0\n0.1,1\n").unwrap();
    assert!(matches!(load_csv(&path), Err(DataFileError::Columns { line: 2, .. })));
    std::fs::write(&path, "0.5,1.0,-1\n").unwrap();
    assert!(matches!(load_csv(&path), Err(DataFileError::Parse { line: 1, column: 3, .. })));
    std::fs::write(&path, "").unwrap();
    assert!(load_csv(&path).is_err());
}

#[test]
fn write_then_load_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let ds = synth_blobs(60, 3, 4, 1.0, 7).unwrap();
    write_csv(&ds, &path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back.labels(), ds.labels());
    assert_eq!(back.inputs(), ds.inputs());
}
