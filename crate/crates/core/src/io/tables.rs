//! CSV tables: control points, polylines, metrics reports, training logs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::atomic_write;
use crate::centerline::{ControlPoints, Pixel, Polyline};
use crate::despeckle::TrainLogRow;
use crate::error::{Error, Result};
use crate::metrics::MetricsRow;

#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    river_id: String,
    node_id: u64,
    row: usize,
    col: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PixelRecord {
    idx: usize,
    row: usize,
    col: usize,
}

fn to_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn from_reader<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Reads the nodes of the first river in the file (or of `river_id`),
/// ordered by `node_id`.
pub fn read_control_points(path: impl AsRef<Path>, river_id: Option<&str>) -> Result<ControlPoints> {
    let rows: Vec<NodeRecord> = from_reader(path.as_ref())?;
    let id = match river_id {
        Some(id) => id.to_string(),
        None => rows
            .first()
            .map(|r| r.river_id.clone())
            .ok_or_else(|| Error::Format("control point file is empty".into()))?,
    };
    let mut nodes: Vec<(u64, Pixel)> = rows
        .into_iter()
        .filter(|r| r.river_id == id)
        .map(|r| (r.node_id, (r.row, r.col)))
        .collect();
    nodes.sort_by_key(|n| n.0);
    if nodes.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Format(format!("duplicate node_id in river {id}")));
    }
    ControlPoints::new(id, nodes.into_iter().map(|n| n.1).collect())
}

pub fn write_control_points(pts: &ControlPoints, path: impl AsRef<Path>) -> Result<()> {
    let rows = pts.nodes.iter().enumerate().map(|(i, &(row, col))| NodeRecord {
        river_id: pts.river_id.clone(),
        node_id: i as u64,
        row,
        col,
    });
    atomic_write(path.as_ref(), &to_bytes(rows)?)
}

pub fn write_polyline(line: &Polyline, path: impl AsRef<Path>) -> Result<()> {
    let rows = line
        .pixels
        .iter()
        .enumerate()
        .map(|(idx, &(row, col))| PixelRecord { idx, row, col });
    atomic_write(path.as_ref(), &to_bytes(rows)?)
}

/// Pixels in `idx` order. The path cost is not stored and comes back as 0;
/// the end pixels are taken as the nodes.
pub fn read_polyline(path: impl AsRef<Path>) -> Result<Polyline> {
    let mut rows: Vec<PixelRecord> = from_reader(path.as_ref())?;
    rows.sort_by_key(|r| r.idx);
    let pixels: Vec<Pixel> = rows.iter().map(|r| (r.row, r.col)).collect();
    let nodes = match (pixels.first(), pixels.last()) {
        (Some(&a), Some(&b)) => vec![a, b],
        _ => Vec::new(),
    };
    Ok(Polyline {
        pixels,
        cost: 0.0,
        nodes,
    })
}

pub fn write_metrics(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &to_bytes(rows)?)
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    from_reader(path.as_ref())
}

pub fn write_train_log(rows: &[TrainLogRow], path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &to_bytes(rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_points_round_trip_and_ordering() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cp.csv");
        std::fs::write(
            &p,
            "river_id,node_id,row,col\nb,0,1,1\na,2,30,4\na,0,10,2\na,1,20,3\n",
        )
        .unwrap();
        let a = read_control_points(&p, Some("a")).unwrap();
        assert_eq!(a.nodes, vec![(10, 2), (20, 3), (30, 4)]);
        let first = read_control_points(&p, None);
        assert!(first.is_err(), "river b has a single node");
        let out = dir.path().join("out.csv");
        write_control_points(&a, &out).unwrap();
        assert_eq!(read_control_points(&out, None).unwrap(), a);
        assert!(std::fs::read_to_string(&out).unwrap().starts_with("river_id,node_id,row,col\n"));
    }

    #[test]
    fn polyline_and_metrics_headers() {
        let dir = tempfile::tempdir().unwrap();
        let line = Polyline { pixels: vec![(0, 0), (1, 1), (1, 2)], cost: 3.0, nodes: vec![(0, 0), (1, 2)] };
        let p = dir.path().join("line.csv");
        write_polyline(&line, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "idx,row,col\n0,0,0\n1,1,1\n2,1,2\n");
        assert_eq!(read_polyline(&p).unwrap().pixels, line.pixels);

        let m = vec![MetricsRow { scene: "s".into(), method: "baseline".into(), precision: 0.5, recall: 1.0, fscore: 2.0 / 3.0 }];
        let mp = dir.path().join("m.csv");
        write_metrics(&m, &mp).unwrap();
        assert!(std::fs::read_to_string(&mp).unwrap().starts_with("scene,method,precision,recall,fscore\n"));
        assert_eq!(read_metrics(&mp).unwrap(), m);

        let log = vec![TrainLogRow { epoch: 1, step: 10, mean_loss: 1.2, val_mse: f64::NAN }];
        let lp = dir.path().join("log.csv");
        write_train_log(&log, &lp).unwrap();
        assert!(std::fs::read_to_string(&lp).unwrap().starts_with("epoch,step,mean_loss,val_mse\n"));
    }
}
