mod common;

use common::random_image;
use pwave::io::*;
use pwave::Plane;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn bt601_full_range_reference_colors() {
    let close = |a: (f64, f64, f64), b: (f64, f64, f64)| (a.0 - b.0).abs() < 1e-3 && (a.1 - b.1).abs() < 1e-3 && (a.2 - b.2).abs() < 1e-3;
    assert!(close(rgb_to_ycbcr(255.0, 255.0, 255.0), (255.0, 128.0, 128.0)));
    assert!(close(rgb_to_ycbcr(0.0, 0.0, 0.0), (0.0, 128.0, 128.0)));
    assert!(close(rgb_to_ycbcr(255.0, 0.0, 0.0), (76.245, 84.972, 255.5)));
    assert!(close(rgb_to_ycbcr(0.0, 0.0, 255.0), (29.07, 255.5, 107.265)));
}

#[test]
fn pgm_round_trip_and_clamping() {
    let dir = tempfile::tempdir().unwrap();
    let plane = random_image(13, 7, &mut ChaCha8Rng::seed_from_u64(1));
    let path = dir.path().join("a.pgm");
    write_pgm(&path, &plane).unwrap();
    assert_eq!(read_luma(&path).unwrap(), plane);

    let wild = Plane::new(3, 1, vec![-4.0, 127.6, 300.0]).unwrap();
    write_pgm(&path, &wild).unwrap();
    assert_eq!(read_luma(&path).unwrap().data, vec![0.0, 128.0, 255.0]);
}

#[test]
fn color_png_is_read_as_luma() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.png");
    let img = image::RgbImage::from_fn(4, 2, |x, _| if x < 2 { image::Rgb([255, 0, 0]) } else { image::Rgb([0, 0, 255]) });
    img.save(&path).unwrap();
    let luma = read_luma(&path).unwrap();
    assert_eq!((luma.width, luma.height), (4, 2));
    assert_eq!(luma.data, vec![76.0, 76.0, 29.0, 29.0, 76.0, 76.0, 29.0, 29.0]);
}

#[test]
fn y4m_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frames: Vec<Plane> = (0..5).map(|_| random_image(16, 8, &mut rng)).collect();
    let path = dir.path().join("v.y4m");
    write_y4m(&path, &frames).unwrap();
    assert_eq!(read_y4m(&path).unwrap(), frames);
    assert_eq!(read_video(&path).unwrap(), frames);
    assert!(write_y4m(&path, &[]).is_err());
}

#[test]
fn frame_directories_sort_numerically() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames: Vec<Plane> = (0..12).map(|_| random_image(8, 8, &mut rng)).collect();
    // names whose lexical order differs from their numeric order
    for (i, f) in frames.iter().enumerate() {
        write_pgm(dir.path().join(format!("f{i}.pgm")), f).unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
    let names: Vec<String> = list_images(dir.path())
        .unwrap()
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names[..3], ["f0.pgm", "f1.pgm", "f2.pgm"]);
    assert_eq!(names.len(), 12);
    assert_eq!(read_video(dir.path()).unwrap(), frames);

    let out = dir.path().join("out");
    write_pgm_dir(&out, &frames).unwrap();
    assert!(out.join("frame_0011.pgm").exists());
    assert_eq!(read_video(&out).unwrap(), frames);
}
