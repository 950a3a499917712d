use amirnet::imageio::{load_image, save_image, ImageIoError};
use amirnet_core::Image;

#[test]
fn black_and_white_map_to_extremes() {
    let dir = tempfile::tempdir().unwrap();
    for (v, name) in [(0.0, "black.png"), (1.0, "white.png")] {
        let p = dir.path().join(name);
        save_image(&Image::filled(9, 11, 3, v).unwrap(), &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.dims(), (9, 11, 3));
        assert!(back.data().iter().all(|&x| x == v));
    }
}

#[test]
fn eight_bit_values_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let img = Image::from_fn(16, 16, 3, |y, x, c| ((y * 16 + x + c * 85) % 256) as f32 / 255.0).unwrap();
    let p = dir.path().join("ramp.png");
    save_image(&img, &p).unwrap();
    assert_eq!(load_image(&p).unwrap(), img);
    let gray = Image::from_fn(8, 9, 1, |y, x, _| (y * 9 + x) as f32 / 255.0).unwrap();
    let p = dir.path().join("gray.png");
    save_image(&gray, &p).unwrap();
    assert_eq!(load_image(&p).unwrap(), gray);
}

#[test]
fn errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_image(dir.path().join("nope.png")), Err(ImageIoError::Missing(_))));

    let bmp = dir.path().join("x.png");
    std::fs::write(&bmp, b"BM\x3a\x00\x00\x00\x00\x00\x00\x00\x36\x00\x00\x00").unwrap();
    assert!(matches!(load_image(&bmp), Err(ImageIoError::Unsupported { .. })));

    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"hello, not an image").unwrap();
    assert!(matches!(load_image(&junk), Err(ImageIoError::Unsupported { .. })));

    let good = dir.path().join("good.png");
    save_image(&Image::filled(8, 8, 3, 0.5).unwrap(), &good).unwrap();
    let mut bytes = std::fs::read(&good).unwrap();
    bytes.truncate(bytes.len() / 2);
    let cut = dir.path().join("cut.png");
    std::fs::write(&cut, bytes).unwrap();
    assert!(matches!(load_image(&cut), Err(ImageIoError::Corrupt { .. })));
}
