use cfx_web::{chunk_text, counterfactual_sentence, Demo};

#[test]
fn chunks_the_figure_sentence() {
    assert_eq!(
        chunk_text("A yellow bird with a black wing and a black pointy beak."),
        ["yellow bird", "black wing", "black pointy beak"]
    );
    assert!(chunk_text("").is_empty());
}

#[test]
fn composes_counterfactuals() {
    assert_eq!(
        counterfactual_sentence("Scarlet Tanager", "black wings").unwrap(),
        "This is not a Scarlet Tanager because it does not have black wings."
    );
    assert_eq!(
        counterfactual_sentence(" Olive Warbler ", "yellow nape").unwrap(),
        "This is not an Olive Warbler because it does not have a yellow nape."
    );
    assert!(counterfactual_sentence("", "red eye").is_err());
    assert!(counterfactual_sentence("Bobolink", "  ").is_err());
}

#[test]
fn demo_explains_with_each_checker() {
    let mut demo = Demo::create(5, 6, 3).unwrap();
    let ids = demo.image_ids();
    assert_eq!(ids.len(), 30);
    let image: serde_json::Value =
        serde_json::from_str(&demo.image_json(&ids[0]).unwrap()).unwrap();
    assert_eq!(image["attributes"].as_array().unwrap().len(), 12);

    for checker in ["oracle", "baseline"] {
        let trace: serde_json::Value =
            serde_json::from_str(&demo.explain_json(&ids[7], checker, "").unwrap()).unwrap();
        assert!(trace["explanation"]["sentence"]
            .as_str()
            .unwrap()
            .starts_with("This is not a"));
    }
    assert!(demo.explain_json(&ids[0], "classifier", "").is_err());
    assert!(demo.explain_json(&ids[0], "psychic", "").is_err());
    assert!(demo.explain_json("missing", "oracle", "").is_err());

    let acc = demo.train(80).unwrap();
    assert!(acc > 0.8, "accuracy {acc}");
    let trace: serde_json::Value =
        serde_json::from_str(&demo.explain_json(&ids[0], "classifier", "c04").unwrap()).unwrap();
    assert_eq!(trace["explanation"]["counter_class"], "c04");
}
