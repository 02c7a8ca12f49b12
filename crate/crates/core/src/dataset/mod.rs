//! The city×year indicator table: loading, scaling, splitting, and
//! synthetic generation.

mod scaler;
mod split;
mod synth;
mod table;

pub use scaler::ColumnScaler;
pub use split::{make_split, Protocol, SplitPlan};
pub use synth::{generate_synthetic, SynthConfig, SynthMetadata};
pub use table::{
    load_schema, load_table, write_schema, write_table, IndicatorTable, IndicatorType, SampleRow,
    SchemaColumn,
};
