//! Classification scores, image-quality comparisons, stimulus similarity
//! structure and report files.

mod metrics;
mod report;

pub use metrics::{
    accuracy, class_cosine_matrix, cosine_similarity, diagonal_contrast, laplacian_filter, laplacian_response,
    micro_f1, psnr, ssim, weighted_f1, CLASSES,
};
pub use report::{
    emit_report, read_pgm, write_pgm, F1Row, GalleryRow, MetricsReport, QualityRow, REPORT_FILE,
};

#[cfg(test)]
mod tests;
