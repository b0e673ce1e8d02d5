use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::layers::Linear;
use super::params::ParamStore;
use crate::error::Result;

/// Which activation follows the first and the second linear layer of a
/// classification head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadActivationOrder {
    #[default]
    TanhThenGelu,
    GeluThenTanh,
}

/// Linear → act → Linear → act → Linear over the pooled state.
pub struct ClassificationHead {
    first: Linear,
    second: Linear,
    out: Linear,
    order: HeadActivationOrder,
}

impl ClassificationHead {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        hidden: usize,
        classes: usize,
        order: HeadActivationOrder,
        std: f64,
    ) -> Result<Self> {
        Ok(Self {
            first: Linear::new(params, &format!("{name}.dense1"), hidden, hidden, std)?,
            second: Linear::new(params, &format!("{name}.dense2"), hidden, hidden, std)?,
            out: Linear::new(params, &format!("{name}.out"), hidden, classes, std)?,
            order,
        })
    }

    pub fn forward(&self, pooled: &Tensor) -> Result<Tensor> {
        let h = self.first.forward(pooled)?;
        let h = match self.order {
            HeadActivationOrder::TanhThenGelu => h.tanh()?,
            HeadActivationOrder::GeluThenTanh => h.gelu_erf()?,
        };
        let h = self.second.forward(&h)?;
        let h = match self.order {
            HeadActivationOrder::TanhThenGelu => h.gelu_erf()?,
            HeadActivationOrder::GeluThenTanh => h.tanh()?,
        };
        self.out.forward(&h)
    }
}

/// Four sequence classifiers and the start/end token scorers. No parameters
/// are shared between heads.
pub struct HeadSet {
    pub intent: ClassificationHead,
    pub requested: ClassificationHead,
    pub status: ClassificationHead,
    pub cat_value: ClassificationHead,
    pub span_start: Linear,
    pub span_end: Linear,
}

/// Parameter-name prefix of each head, in task order.
pub const HEAD_PREFIXES: [&str; 5] = [
    "heads.intent.",
    "heads.requested.",
    "heads.status.",
    "heads.cat_value.",
    "heads.span_",
];

impl HeadSet {
    pub fn new(
        params: &mut ParamStore,
        hidden: usize,
        order: HeadActivationOrder,
        std: f64,
    ) -> Result<Self> {
        Ok(Self {
            intent: ClassificationHead::new(params, "heads.intent", hidden, 2, order, std)?,
            requested: ClassificationHead::new(params, "heads.requested", hidden, 2, order, std)?,
            status: ClassificationHead::new(params, "heads.status", hidden, 3, order, std)?,
            cat_value: ClassificationHead::new(params, "heads.cat_value", hidden, 2, order, std)?,
            span_start: Linear::new(params, "heads.span_start", hidden, 1, std)?,
            span_end: Linear::new(params, "heads.span_end", hidden, 1, std)?,
        })
    }
}
