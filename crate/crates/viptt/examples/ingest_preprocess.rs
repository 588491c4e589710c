//! NIfTI-1 ingestion and preprocessing: Hounsfield windowing followed by
//! spline-interpolated zoom (SIZ) onto a fixed grid.

use viptt::preprocess::{hu_normalize, siz_resize, ResizeSpec, SplineOrder, DEFAULT_HU_WINDOW};
use viptt::volume_io::{build_nifti_fixture, read_nifti_file, write_tensor};
use viptt::Tensor;

fn main() {
    let dir = std::env::temp_dir().join("viptt_ingest_example");
    std::fs::create_dir_all(&dir).unwrap();

    // synthesize a small CT-like scan: 6x6 in-plane, 3 slices, raw HU with
    // a scl_slope/inter pair like real scanners emit
    let raw: Vec<f64> = (0..6 * 6 * 3).map(|i| (i % 140) as f64 * 10.0 - 800.0).collect();
    let nii = dir.join("scan.nii");
    std::fs::write(&nii, build_nifti_fixture((6, 6, 3), 16, 1.0, 0.0, &raw)).unwrap();

    let vol = read_nifti_file(&nii).unwrap();
    let (d, h, w) = vol.dims();
    println!("read {d}x{h}x{w} volume, domain {:?}", vol.domain());

    let unit = hu_normalize(&vol, DEFAULT_HU_WINDOW).unwrap();
    let resized = siz_resize(
        &unit,
        &ResizeSpec { target_dims: (4, 8, 8), order: SplineOrder::Cubic },
    )
    .unwrap();
    println!("resized to {:?}", resized.dims());

    let (d, h, w) = resized.dims();
    let t = Tensor::from_vec(&[d, h, w], resized.data().to_vec()).unwrap();
    let out = dir.join("scan.vpt");
    write_tensor(&out, &t).unwrap();
    println!("wrote {}", out.display());
}
