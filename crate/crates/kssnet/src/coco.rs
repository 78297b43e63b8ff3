//! Multi-label view of a COCO `instances_*.json` file: one sample per image,
//! labelled with the set of categories among its object annotations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::Deserialize;

use kssnet_core::ingest::{AnnotationSet, LabelVocabulary, Sample};

use crate::error::{Error, Result};

#[derive(Deserialize)]
struct Instances {
    images: Vec<Image>,
    annotations: Vec<Annotation>,
    categories: Vec<Category>,
}

#[derive(Deserialize)]
struct Image {
    id: u64,
}

#[derive(Deserialize)]
struct Annotation {
    image_id: u64,
    category_id: u64,
}

#[derive(Deserialize)]
struct Category {
    id: u64,
    name: String,
}

/// Labels follow ascending category id; samples follow ascending image id.
/// Images without annotations are kept as empty samples.
pub fn load_instances(path: &Path) -> Result<(LabelVocabulary, AnnotationSet)> {
    let file = File::open(path).map_err(|source| Error::Read { path: path.to_path_buf(), source })?;
    let data: Instances = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    parse(data, path)
}

/// As [`load_instances`], from an in-memory JSON string.
pub fn parse_instances(json: &str, path: &Path) -> Result<(LabelVocabulary, AnnotationSet)> {
    let data: Instances = serde_json::from_str(json).map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
    parse(data, path)
}

fn parse(mut data: Instances, path: &Path) -> Result<(LabelVocabulary, AnnotationSet)> {
    data.categories.sort_by_key(|c| c.id);
    let index: BTreeMap<u64, usize> = data.categories.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    let vocab = LabelVocabulary::new(data.categories.iter().map(|c| c.name.clone()))?;
    let mut labels: BTreeMap<u64, Vec<usize>> = data.images.iter().map(|im| (im.id, Vec::new())).collect();
    for a in &data.annotations {
        let Some(&label) = index.get(&a.category_id) else {
            return Err(Error::Format { path: path.to_path_buf(), msg: format!("unknown category id {}", a.category_id) });
        };
        let Some(set) = labels.get_mut(&a.image_id) else {
            return Err(Error::Format { path: path.to_path_buf(), msg: format!("unknown image id {}", a.image_id) });
        };
        set.push(label);
    }
    let samples = labels.into_iter().map(|(id, l)| Sample { id: id.to_string(), labels: l.into_iter().collect() }).collect();
    let ann = AnnotationSet::new(vocab.len(), samples)?;
    Ok((vocab, ann))
}
