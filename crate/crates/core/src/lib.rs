pub mod evaluation;
pub mod gradcam;
pub mod nn;
pub mod segmentation;
pub mod synth;
pub mod waveform_io;
pub mod xcm;
