// Write arrays in the `.npy` v1.0 container, read back the header alone and
// the full payload.

use vss::arrayio::{read_array, read_header, write_array, ArrayFile, Dtype};

pub fn run_example() -> ArrayFile {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("features.npy");
    let values: Vec<f32> = (0..2 * 3 * 4).map(|i| i as f32 * 0.5 - 3.0).collect();
    let array = ArrayFile::from_f32(vec![2, 3, 4], values).unwrap();
    write_array(&path, &array).unwrap();

    let header = read_header(&path).unwrap();
    println!("dtype {:?} shape {:?} data at byte {}", header.dtype, header.shape, header.data_offset);
    assert_eq!(header.dtype, Dtype::F32);
    assert_eq!(header.data_offset % 64, 0);

    let back = read_array(&path).unwrap();
    assert_eq!(back, array);

    let mask = ArrayFile::from_u8(vec![2, 2], vec![0, 1, 1, 0]).unwrap();
    write_array(dir.path().join("mask.npy"), &mask).unwrap();
    println!("mask round trip: {:?}", read_array(dir.path().join("mask.npy")).unwrap().data());
    back
}

#[allow(dead_code)]
fn main() {
    run_example();
}
