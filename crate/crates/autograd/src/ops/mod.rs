pub(crate) mod conv;
pub mod norm;
pub(crate) mod softmax;
pub(crate) mod spatial;
