use std::fs;
use std::path::{Path, PathBuf};

use super::{
    read_calibration, read_kitti_labels, read_point_cloud, read_records, write_calibration, write_detections,
    write_ground_truth, write_point_cloud, DetectionSet, IoError,
};
use crate::eval::GroundTruthFrame;
use crate::model::{CalibrationSet, FrameInput, LabelSet};

/// Files of one frame under a bundle root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameBundle {
    pub root: PathBuf,
    pub frame_id: String,
}

/// Frame ids with a point cloud under `root/velodyne`, sorted.
pub fn list_frames(root: &Path) -> Result<Vec<String>, IoError> {
    let dir = root.join("velodyne");
    let mut ids = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| IoError::io(&dir, e))? {
        let path = entry.map_err(|e| IoError::io(&dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("bin") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

impl FrameBundle {
    pub fn new(root: impl Into<PathBuf>, frame_id: impl Into<String>) -> Self {
        Self { root: root.into(), frame_id: frame_id.into() }
    }

    fn file(&self, dir: &str, ext: &str) -> PathBuf {
        self.root.join(dir).join(format!("{}.{ext}", self.frame_id))
    }

    pub fn cloud_path(&self) -> PathBuf {
        self.file("velodyne", "bin")
    }

    pub fn calib_path(&self) -> PathBuf {
        self.file("calib", "txt")
    }

    pub fn detections_path(&self) -> PathBuf {
        self.file("detections", "txt")
    }

    pub fn label_path(&self) -> PathBuf {
        self.file("label", "txt")
    }

    pub fn kitti_label_path(&self) -> PathBuf {
        self.file("label_2", "txt")
    }

    pub fn read_calibration(&self) -> Result<CalibrationSet, IoError> {
        read_calibration(&self.calib_path())
    }

    /// Cloud, calibration and detections. The detection file may only hold
    /// records of this frame; 2D lists are padded to the camera count.
    pub fn load_input(&self, labels: &LabelSet) -> Result<FrameInput, IoError> {
        let mut cloud = read_point_cloud(&self.cloud_path())?;
        cloud.frame_id = self.frame_id.clone();
        let calib = self.read_calibration()?;
        let path = self.detections_path();
        let mut records = read_records(&path, labels)?;
        if let Some(other) = records.frames.keys().find(|k| **k != self.frame_id) {
            return Err(IoError::BadValue { path, key: "frame".into(), value: other.clone() });
        }
        let set = records.frames.remove(&self.frame_id).map(|f| f.detections).unwrap_or_default();
        let mut dets2d = set.dets2d;
        if dets2d.len() > calib.cameras.len() {
            return Err(IoError::BadDimension {
                path,
                key: "views".into(),
                expected: calib.cameras.len(),
                got: dets2d.len(),
            });
        }
        dets2d.resize_with(calib.cameras.len(), Vec::new);
        Ok(FrameInput { cloud, calib, dets3d: set.dets3d, dets2d_per_view: dets2d })
    }

    /// Ground truth from `label/` records, else from a KITTI `label_2/`
    /// file, else `None`.
    pub fn load_ground_truth(&self, labels: &LabelSet) -> Result<Option<GroundTruthFrame>, IoError> {
        let records = self.label_path();
        if records.exists() {
            return Ok(Some(read_records(&records, labels)?.ground_truth(&self.frame_id)));
        }
        let kitti = self.kitti_label_path();
        if kitti.exists() {
            let calib = self.read_calibration()?;
            return read_kitti_labels(&kitti, &self.frame_id, &calib, labels).map(Some);
        }
        Ok(None)
    }

    pub fn write(&self, frame: &FrameInput, gt: Option<&GroundTruthFrame>, labels: &LabelSet) -> Result<(), IoError> {
        write_point_cloud(&self.cloud_path(), &frame.cloud)?;
        write_calibration(&self.calib_path(), &frame.calib)?;
        let set = DetectionSet { dets3d: frame.dets3d.clone(), dets2d: frame.dets2d_per_view.clone() };
        write_detections(&self.detections_path(), &self.frame_id, &set, labels)?;
        if let Some(gt) = gt {
            let gt = GroundTruthFrame { frame_id: self.frame_id.clone(), boxes: gt.boxes.clone() };
            write_ground_truth(&self.label_path(), &gt, labels)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_frame, CameraRig, DetectorNoiseSpec, SceneSpec};

    #[test]
    fn simulated_frame_round_trip() {
        let labels = LabelSet::kitti();
        let mut spec = SceneSpec::for_labels(&labels);
        spec.rig = CameraRig::Stereo { baseline: 0.54 };
        let mut noise = DetectorNoiseSpec::default();
        noise.det2d.masks = true;
        let sim = simulate_frame(&spec, &noise, 3).unwrap();
        let input = sim.to_input();
        let dir = tempfile::tempdir().unwrap();
        let b = FrameBundle::new(dir.path(), "000003");
        b.write(&input, Some(sim.gt()), &labels).unwrap();
        assert_eq!(list_frames(dir.path()).unwrap(), vec!["000003".to_string()]);

        let back = b.load_input(&labels).unwrap();
        assert_eq!(back.cloud.len(), input.cloud.len());
        assert_eq!(back.calib.stereo_pairs, input.calib.stereo_pairs);
        for (a, b) in back.calib.cameras.iter().zip(&input.calib.cameras) {
            assert_eq!(a.projection, b.projection);
            assert_eq!(a.intrinsics_or_projection(), b.intrinsics_or_projection());
        }
        assert_eq!(back.dets3d.len(), input.dets3d.len());
        assert_eq!(back.dets2d_per_view.len(), 2);
        for (a, b) in back.dets2d_per_view.iter().flatten().zip(input.dets2d_per_view.iter().flatten()) {
            assert_eq!(a.mask, b.mask);
            assert!((a.box2d.x_min() - b.box2d.x_min()).abs() <= 1e-6);
        }
        let gt = b.load_ground_truth(&labels).unwrap().unwrap();
        assert_eq!(gt.boxes.len(), sim.gt().boxes.len());

        // second write is byte-identical
        let before = fs::read(b.detections_path()).unwrap();
        b.write(&back, Some(&gt), &labels).unwrap();
        let after = fs::read(b.detections_path()).unwrap();
        assert_eq!(after, before);
    }

    #[test]
    fn foreign_frame_rejected() {
        let labels = LabelSet::kitti();
        let sim = simulate_frame(&SceneSpec::for_labels(&labels), &DetectorNoiseSpec::default(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let b = FrameBundle::new(dir.path(), "a");
        b.write(&sim.to_input(), None, &labels).unwrap();
        fs::write(b.detections_path(), "3d zz 1 0 0 1 1 1 0 0.5 Car\n").unwrap();
        assert!(matches!(b.load_input(&labels), Err(IoError::BadValue { .. })));
        assert!(b.load_ground_truth(&labels).unwrap().is_none());
    }

    #[test]
    fn missing_cloud_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let b = FrameBundle::new(dir.path(), "x");
        assert!(matches!(b.load_input(&LabelSet::kitti()), Err(IoError::Io { .. })));
    }
}
