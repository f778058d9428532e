//! High-frequency rectified loss: plain sum of the velocity MSE, the weighted
//! sub-band loss and the HOG descriptor loss.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::diffusion::rec_loss_node;
use crate::error::{Error, Result};
use crate::hog::{hog_loss_node, HogConfig};
use crate::tensor::{Element, Tensor};
use crate::wavelet::{wlf_loss_node, SubbandWeights};

/// Which terms enter the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossSelection {
    #[serde(rename = "rec")]
    Rec,
    #[serde(rename = "rec+wlf")]
    RecWlf,
    #[serde(rename = "rec+hog")]
    RecHog,
    #[serde(rename = "hr")]
    Hr,
}

impl LossSelection {
    pub fn uses_wlf(self) -> bool {
        matches!(self, LossSelection::RecWlf | LossSelection::Hr)
    }

    pub fn uses_hog(self) -> bool {
        matches!(self, LossSelection::RecHog | LossSelection::Hr)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossSelection::Rec => "rec",
            LossSelection::RecWlf => "rec+wlf",
            LossSelection::RecHog => "rec+hog",
            LossSelection::Hr => "hr",
        }
    }
}

impl fmt::Display for LossSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rec" => Ok(LossSelection::Rec),
            "rec+wlf" => Ok(LossSelection::RecWlf),
            "rec+hog" => Ok(LossSelection::RecHog),
            "hr" => Ok(LossSelection::Hr),
            other => Err(Error::invalid(format!("unknown loss selection `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub selection: LossSelection,
    #[serde(default)]
    pub weights: SubbandWeights,
    #[serde(default)]
    pub hog: HogConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            selection: LossSelection::Hr,
            weights: SubbandWeights::default(),
            hog: HogConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.hog.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub t: f64,
    pub l_rec: f64,
    pub l_wlf: f64,
    pub l_hog: f64,
    pub l_total: f64,
    pub weights: SubbandWeights,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,t,l_rec,l_wlf,l_hog,l_total";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{:.6},{:.8e},{:.8e},{:.8e},{:.8e}",
            self.t, self.l_rec, self.l_wlf, self.l_hog, self.l_total
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.l_rec, self.l_wlf, self.l_hog, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Loss terms recorded on a graph. Disabled terms are `None`.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub rec: NodeId,
    pub wlf: Option<NodeId>,
    pub hog: Option<NodeId>,
    pub total: NodeId,
}

impl LossNodes {
    pub fn report<T: Element>(
        &self,
        values: &crate::autodiff::Values<T>,
        t: f64,
        weights: SubbandWeights,
    ) -> Result<LossReport> {
        let get = |id: Option<NodeId>| -> Result<f64> {
            id.map_or(Ok(0.0), |id| values.get(id).item().map(Element::as_f64))
        };
        Ok(LossReport {
            t,
            l_rec: get(Some(self.rec))?,
            l_wlf: get(self.wlf)?,
            l_hog: get(self.hog)?,
            l_total: get(Some(self.total))?,
            weights,
        })
    }
}

/// Records the selected objective between a velocity node and its target node.
pub fn loss_nodes<T: Element>(
    g: &mut Graph<T>,
    v_pred: NodeId,
    target: NodeId,
    cfg: &LossConfig,
) -> Result<LossNodes> {
    cfg.validate()?;
    let residual = g.sub(v_pred, target)?;
    let rec = rec_loss_node(g, residual);
    let wlf = if cfg.selection.uses_wlf() {
        Some(wlf_loss_node(g, residual, &cfg.weights)?)
    } else {
        None
    };
    let hog = if cfg.selection.uses_hog() {
        Some(hog_loss_node(g, v_pred, target, &cfg.hog)?)
    } else {
        None
    };
    let mut total = rec;
    for term in [wlf, hog].into_iter().flatten() {
        total = g.add(term, total)?;
    }
    Ok(LossNodes {
        rec,
        wlf,
        hog,
        total,
    })
}

/// Evaluates a loss selection on plain tensors.
pub fn evaluate_loss<T: Element>(
    v_pred: &Tensor<T>,
    x0: &Tensor<T>,
    eps: &Tensor<T>,
    t: f64,
    cfg: &LossConfig,
) -> Result<LossReport> {
    v_pred.ensure_same_shape(x0)?;
    v_pred.ensure_same_shape(eps)?;
    let target = eps.sub(x0)?;
    let shape = v_pred.shape().to_vec();
    let mut g = Graph::<T>::new();
    let v = g.constant("v", shape.clone())?;
    let tn = g.constant("target", shape)?;
    let nodes = loss_nodes(&mut g, v, tn, cfg)?;
    let inputs = BTreeMap::from([("v".to_string(), v_pred.clone()), ("target".to_string(), target)]);
    let values = g.forward(&inputs)?;
    nodes.report(&values, t, cfg.weights)
}

/// All three terms and their unweighted sum.
pub fn hr_loss<T: Element>(
    v_pred: &Tensor<T>,
    x0: &Tensor<T>,
    eps: &Tensor<T>,
    w: &SubbandWeights,
    cfg: &HogConfig,
) -> Result<LossReport> {
    let loss = LossConfig {
        selection: LossSelection::Hr,
        weights: *w,
        hog: *cfg,
    };
    evaluate_loss(v_pred, x0, eps, f64::NAN, &loss)
}
