use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqlabel_core::campseudo::{CrfConfig, ThresholdConfig};
use seqlabel_core::merger::MergeOptions;
use seqlabel_core::pipeline::CrfStage;
use seqlabel_core::sequencer::{DistanceMetric, FeatureSource, SequencerConfig};
use seqlabel_core::synthgen::SynthConfig;

#[derive(Debug, Parser)]
#[command(name = "seqlabel", version, about = "Sequence-propagated pseudo labels from one annotation per sequence")]
pub struct Cli {
    /// Workspace root holding manifest, sequences and stage outputs.
    #[arg(long, global = true, default_value = ".")]
    pub workspace: PathBuf,
    /// Dataset manifest [default: <workspace>/manifest.json].
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Worker threads for per-image stages [default: all cores].
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Base seed for synthetic data.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = LogFormat::Text)]
    pub log_format: LogFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogFormat {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic evolving-content dataset into the workspace.
    Synth(SynthArgs),
    /// Group images into sequences and pick representatives.
    Sequence(SequenceArgs),
    /// Threshold score maps into CAM pseudo labels, optionally CRF-refined.
    Campseudo(CampseudoArgs),
    /// Merge each sequence annotation with its members' CAM pseudo labels.
    Merge(MergeArgs),
    /// Score predicted masks against ground truth.
    Metrics(MetricsArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub subjects: u32,
    #[arg(long, default_value_t = 2)]
    pub classes_per_subject: u32,
    #[arg(long, default_value_t = 10)]
    pub timesteps: u32,
    #[arg(long, default_value_t = 64)]
    pub image_size: u32,
    #[arg(long, default_value_t = 0.1)]
    pub decay_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.15)]
    pub cam_noise_sigma: f64,
    #[arg(long, default_value_t = 3.0)]
    pub cam_blur_sigma: f64,
    #[arg(long)]
    pub abrupt_change_at: Option<u32>,
}

impl SynthArgs {
    pub fn config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            subjects: self.subjects,
            classes_per_subject: self.classes_per_subject,
            timesteps: self.timesteps,
            image_size: self.image_size,
            decay_rate: self.decay_rate,
            jitter: self.jitter,
            cam_noise_sigma: self.cam_noise_sigma,
            cam_blur_sigma: self.cam_blur_sigma,
            abrupt_change_at: self.abrupt_change_at,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Distance {
    Cosine,
    L1,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Features {
    Histogram,
    External,
}

#[derive(Debug, Args)]
pub struct SequenceArgs {
    #[arg(long, value_enum, default_value_t = Distance::Cosine)]
    pub distance: Distance,
    /// Adjacent images farther apart than this start a new sequence.
    #[arg(long, default_value_t = 0.15)]
    pub split_threshold: f64,
    /// `external` reads a `<image>.fve` sidecar per image.
    #[arg(long, value_enum, default_value_t = Features::Histogram)]
    pub feature_source: Features,
    #[arg(long, default_value_t = 64)]
    pub histogram_bins: u32,
}

impl SequenceArgs {
    pub fn config(&self) -> SequencerConfig {
        SequencerConfig {
            distance: match self.distance {
                Distance::Cosine => DistanceMetric::Cosine,
                Distance::L1 => DistanceMetric::L1,
            },
            split_threshold: self.split_threshold,
            feature_source: match self.feature_source {
                Features::Histogram => FeatureSource::Histogram,
                Features::External => FeatureSource::ExternalFile,
            },
            histogram_bins: self.histogram_bins,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Cam,
    Merged,
    Off,
}

impl From<Stage> for CrfStage {
    fn from(s: Stage) -> Self {
        match s {
            Stage::Cam => CrfStage::Cam,
            Stage::Merged => CrfStage::Merged,
            Stage::Off => CrfStage::Off,
        }
    }
}

#[derive(Debug, Args)]
pub struct CrfArgs {
    /// Where dense-CRF refinement runs.
    #[arg(long, value_enum, default_value_t = Stage::Cam)]
    pub crf_stage: Stage,
    #[arg(long, default_value_t = 5)]
    pub crf_iterations: u32,
    #[arg(long, default_value_t = 3.0)]
    pub spatial_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spatial_sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub bilateral_weight: f64,
    #[arg(long, default_value_t = 8.0)]
    pub bilateral_spatial_sigma: f64,
    #[arg(long, default_value_t = 16.0)]
    pub bilateral_color_sigma: f64,
    #[arg(long, default_value_t = 128)]
    pub downsample_max_side: u32,
    /// Let the CRF relabel pixels the thresholds left ignored.
    #[arg(long)]
    pub no_keep_ignore: bool,
}

impl CrfArgs {
    pub fn crf(&self) -> CrfConfig {
        CrfConfig {
            iterations: self.crf_iterations,
            spatial_weight: self.spatial_weight,
            spatial_sigma: self.spatial_sigma,
            bilateral_weight: self.bilateral_weight,
            bilateral_spatial_sigma: self.bilateral_spatial_sigma,
            bilateral_color_sigma: self.bilateral_color_sigma,
            downsample_max_side: self.downsample_max_side,
            keep_ignore: !self.no_keep_ignore,
        }
    }

    pub fn stage(&self) -> CrfStage {
        self.crf_stage.into()
    }
}

#[derive(Debug, Args)]
pub struct CampseudoArgs {
    #[arg(long, default_value_t = 0.30)]
    pub fg_threshold: f64,
    #[arg(long, default_value_t = 0.05)]
    pub bg_threshold: f64,
    #[command(flatten)]
    pub crf: CrfArgs,
}

impl CampseudoArgs {
    pub fn threshold(&self) -> ThresholdConfig {
        ThresholdConfig {
            fg_threshold: self.fg_threshold,
            bg_threshold: self.bg_threshold,
        }
    }
}

#[derive(Debug, Args)]
pub struct MergeFlags {
    /// Also require the CAM class to be absent from the annotation's classes.
    #[arg(long)]
    pub strict_class_set: bool,
    /// Carry CAM ignore pixels into merged masks where the annotation is background.
    #[arg(long)]
    pub propagate_ignore: bool,
    #[command(flatten)]
    pub crf: CrfArgs,
}

impl MergeFlags {
    pub fn options(&self) -> MergeOptions {
        MergeOptions {
            strict_class_set: self.strict_class_set,
            propagate_ignore: self.propagate_ignore,
        }
    }
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Write each representative's ground truth as its sequence annotation first.
    #[arg(long)]
    pub simulate_annotations: bool,
    /// Dilate (> 0) or erode (< 0) simulated annotations by this many pixels.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub annotation_noise: i32,
    #[command(flatten)]
    pub flags: MergeFlags,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Directory of `<image_id>.png` predictions [default: <workspace>/merged].
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Leave background out of the averages.
    #[arg(long)]
    pub exclude_background: bool,
    /// Score ignore pixels in predictions as background.
    #[arg(long)]
    pub ignore_as_background: bool,
    /// Report path [default: <workspace>/reports/metrics.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    #[arg(long, default_value_t = seqlabel_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value_t = seqlabel_service::DEFAULT_MAX_UPLOAD)]
    pub max_upload_bytes: usize,
    #[command(flatten)]
    pub flags: MergeFlags,
}
