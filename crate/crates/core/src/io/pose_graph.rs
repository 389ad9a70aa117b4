use super::parse_error;
use crate::error::{Error, Location, Result};
use crate::geometry::RigidTransform;
use crate::optim::{PoseGraph, PoseGraphEdge};
use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};

pub const POSE_GRAPH_FORMAT: &str = "r3d-pose-graph";
pub const POSE_GRAPH_VERSION: u32 = 1;
const FORMAT: &str = "pose graph";

#[derive(Deserialize)]
struct Tag {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    source: usize,
    target: usize,
    transform: Vec<f64>,
    information: Vec<f64>,
    uncertain: bool,
    confidence: f64,
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    format: String,
    version: u32,
    nodes: Vec<Vec<f64>>,
    edges: Vec<EdgeRecord>,
}

fn json_error(e: serde_json::Error) -> Error {
    parse_error(FORMAT, Location::Line(e.line().max(1)), e.to_string())
}

pub(super) fn parse(bytes: &[u8]) -> Result<PoseGraph> {
    let tag: Tag = serde_json::from_slice(bytes).map_err(json_error)?;
    if tag.format != POSE_GRAPH_FORMAT {
        return Err(parse_error(FORMAT, Location::Line(1), format!("format tag {:?}", tag.format)));
    }
    if tag.version != POSE_GRAPH_VERSION {
        return Err(Error::Version {
            format: FORMAT,
            found: tag.version.to_string(),
            expected: POSE_GRAPH_VERSION.to_string(),
        });
    }
    let record: GraphRecord = serde_json::from_slice(bytes).map_err(json_error)?;
    let nodes = record
        .nodes
        .iter()
        .enumerate()
        .map(|(i, v)| RigidTransform::from_row_major(v).map_err(|e| Error::invalid(format!("node {i}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let edges = record
        .edges
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let transform =
                RigidTransform::from_row_major(&e.transform).map_err(|err| Error::invalid(format!("edge {k}: {err}")))?;
            if e.information.len() != 36 {
                return Err(Error::invalid(format!("edge {k}: information needs 36 values")));
            }
            Ok(PoseGraphEdge {
                source: e.source,
                target: e.target,
                transform,
                information: Matrix6::from_row_slice(&e.information),
                uncertain: e.uncertain,
                confidence: e.confidence,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let graph = PoseGraph { nodes, edges };
    graph.validate()?;
    Ok(graph)
}

pub(super) fn encode(graph: &PoseGraph) -> Result<String> {
    graph.validate()?;
    let record = GraphRecord {
        format: POSE_GRAPH_FORMAT.into(),
        version: POSE_GRAPH_VERSION,
        nodes: graph.nodes.iter().map(|t| t.to_row_major().to_vec()).collect(),
        edges: graph
            .edges
            .iter()
            .map(|e| EdgeRecord {
                source: e.source,
                target: e.target,
                transform: e.transform.to_row_major().to_vec(),
                information: e.information.transpose().as_slice().to_vec(),
                uncertain: e.uncertain,
                confidence: e.confidence,
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&record).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    Ok(text)
}
