//! Browser bindings for a small in-page character CNN. Every method returns
//! JSON text; errors surface as JavaScript exceptions carrying a message.

use serde::Serialize;
use wasm_bindgen::prelude::*;

mod session;

pub use session::{
    ClassProbability, ConfusionView, DemoOptions, FilterHit, PredictionView, Session, Summary,
};

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// A three-class toy corpus in `text<TAB>label` form.
#[wasm_bindgen(js_name = sampleCorpus)]
pub fn sample_corpus(per_class: usize, seed: u32) -> String {
    let n = per_class.clamp(1, 500);
    charlid::synthetic::to_tsv(&charlid::synthetic::separable_corpus(&[n, n, n], seed.into()))
}

#[wasm_bindgen]
pub struct Demo {
    session: Session,
}

#[wasm_bindgen]
impl Demo {
    /// `options` is a JSON object with any of the `DemoOptions` fields, or
    /// an empty string for defaults.
    #[wasm_bindgen(constructor)]
    pub fn new(corpus_tsv: &str, options: &str) -> Result<Demo, JsValue> {
        let options: DemoOptions = if options.trim().is_empty() {
            DemoOptions::default()
        } else {
            serde_json::from_str(options).map_err(js_err)?
        };
        let session = Session::new(corpus_tsv, &options).map_err(js_err)?;
        Ok(Demo { session })
    }

    pub fn summary(&self) -> String {
        json(&self.session.summary())
    }

    /// Runs one epoch; returns its record.
    pub fn epoch(&mut self) -> Result<String, JsValue> {
        self.session.epoch().map(|r| json(&r)).map_err(js_err)
    }

    pub fn confusion(&self) -> Result<String, JsValue> {
        self.session.confusion().map(|c| json(&c)).map_err(js_err)
    }

    pub fn predict(&self, text: &str) -> Result<String, JsValue> {
        self.session.predict(text).map(|p| json(&p)).map_err(js_err)
    }

    pub fn inspect(&self, text: &str, top: usize) -> Result<String, JsValue> {
        self.session.inspect(text, top).map(|h| json(&h)).map_err(js_err)
    }
}
