"""Regenerates the toy corpora in this directory. Deterministic: the output
is byte-identical across runs."""
import json, os, random

HERE = os.path.dirname(os.path.abspath(__file__))
rng = random.Random(20231017)
ADJ = ["young","old","tall","quiet","busy","small","bright","tired","happy","careful"]
NOUN = ["skier","farmer","child","teacher","dog","baker","pilot","student","runner","painter","fisher","doctor"]
VERB = ["walks","runs","climbs","jumps","rests","waits","sings","reads","cooks","paints","skis","swims"]
PLACE = ["mountain","river","kitchen","garden","station","library","beach","forest","market","bridge","harbor","field"]
TIME = ["in the morning","at noon","after dinner","before sunrise","during the storm","on sunday"]
OBJ = ["a red kite","the old map","fresh bread","a heavy bag","a small boat","the new book","warm soup","a blue bicycle"]
TOPIC_WORDS = {
 "sports":["match","team","score","coach","league","goal","season"],
 "politics":["election","senate","vote","policy","minister","campaign","law"],
 "science":["experiment","cell","planet","theory","laboratory","molecule","data"],
 "business":["market","profit","company","shares","merger","revenue","startup"],
}
POS = ["wonderful","great","delightful","excellent","lovely"]
NEG = ["terrible","awful","boring","disappointing","dreadful"]
NEU = ["ordinary","average","acceptable","plain","typical"]
THINGS = ["movie","meal","hotel","concert","book","game"]

def sentence():
    return f"the {rng.choice(ADJ)} {rng.choice(NOUN)} {rng.choice(VERB)} near the {rng.choice(PLACE)} {rng.choice(TIME)}"

SEEN = set()
def add(corpus, task, tpl, iid, kind, instr, gt, choices=None):
    r = {"task_id":task,"template_id":tpl,"instance_id":iid,"kind":kind,"instruction":instr,"ground_truth":gt}
    if choices is not None: r["choices"] = choices
    corpus.append(r)

def unique(corpus, block):
    # Re-draw a block until none of its instructions were used before.
    while True:
        tmp = []
        block(tmp)
        ins = [r["instruction"] for r in tmp]
        if len(set(ins)) == len(ins) and not SEEN.intersection(ins):
            SEEN.update(ins); corpus.extend(tmp); return

def pretrain(n=24):
    c = []
    for i in range(n):
        iid = f"{i:03d}"
        def blk0(c):
            lab = rng.choice(["positive","negative","neutral"])
            w = rng.choice({"positive":POS,"negative":NEG,"neutral":NEU}[lab]); th = rng.choice(THINGS)
            text = f"the {th} was {w} and i {'would' if lab=='positive' else 'would not' if lab=='negative' else 'might'} go again"
            ch = ["positive","negative","neutral"]
            add(c,"sentiment","t0",iid,"classification",f"Review: {text}. Is this review positive, negative, or neutral?",lab,ch)
            add(c,"sentiment","t1",iid,"classification",f"How does the writer feel? {text}",lab,ch)
        unique(c, blk0)
        def blk1(c):
            s = sentence(); lab = rng.choice(["entailment","neutral","contradiction"])
            toks = s.split()
            if lab=="entailment": h = " ".join(toks[:6])
            elif lab=="neutral": h = f"the {toks[2]} is {rng.choice(ADJ)} today"
            else: h = f"nobody {toks[3]} near the {toks[6]}"
            ch = ["entailment","neutral","contradiction"]
            add(c,"nli","t0",iid,"classification",f"Premise: {s}. Hypothesis: {h}. Does the premise entail the hypothesis?",lab,ch)
            add(c,"nli","t1",iid,"classification",f"{s}. Question: {h}? Entailment, neutral, or contradiction?",lab,ch)
        unique(c, blk1)
        def blk2(c):
            lab = rng.choice(list(TOPIC_WORDS)); ws = rng.sample(TOPIC_WORDS[lab],3)
            text = f"reports say the {ws[0]} changed after the {ws[1]} and the {ws[2]}"
            ch = list(TOPIC_WORDS)
            add(c,"topic","t0",iid,"classification",f"Article: {text}. What is the topic of this article?",lab,ch)
            add(c,"topic","t1",iid,"classification",f"Classify the news into sports, politics, science, or business: {text}",lab,ch)
        unique(c, blk2)
        def blk3(c):
            a,nn,v,p = rng.choice(ADJ),rng.choice(NOUN),rng.choice(VERB),rng.choice(PLACE)
            gt = f"the {a} {nn} {v} down to the {p} {rng.choice(TIME)}"
            add(c,"concept_to_sentence","t0",iid,"generation",f"Put the concepts together to form a sentence: {nn}, {v}, {p}.",gt)
            add(c,"concept_to_sentence","t1",iid,"generation",f"Write a sentence using the words {nn}, {v} and {p}.",gt)
        unique(c, blk3)
        def blk4(c):
            s1, s2 = sentence(), sentence()
            o = rng.choice(OBJ)
            gt = f"{' '.join(s1.split()[:4])} with {o}"
            add(c,"summarize","t0",iid,"generation",f"Summarize: {s1} carrying {o}. Later {s2}.",gt)
            add(c,"summarize","t1",iid,"generation",f"{s1} carrying {o}. Later {s2}. TL;DR:",gt)
        unique(c, blk4)
        def blk5(c):
            nn,v,p,o = rng.choice(NOUN),rng.choice(VERB),rng.choice(PLACE),rng.choice(OBJ)
            gt = f"the {nn} brings {o} to the {p} and {v} there"
            add(c,"describe_plan","t0",iid,"generation",f"The {nn} has {o} and wants to go to the {p}. What happens next?",gt)
            add(c,"describe_plan","t1",iid,"generation",f"Describe what the {nn} does with {o} at the {p}.",gt)
        unique(c, blk5)
    return c

def adapt(n_train=40, n_test=12):
    tr, te = [], []
    def one(i, target, templates):
        iid = f"{i:03d}"
        def blk0(target):
            nn,v,p,t,o = rng.choice(NOUN),rng.choice(VERB),rng.choice(PLACE),rng.choice(TIME),rng.choice(OBJ)
            gt = f"a {rng.choice(ADJ)} {nn} {v} beside the {p} holding {o} {t}"
            for tp, ins in list(zip(["t0","t1"], [f"Describe the scene: {nn}, {p}, {o}.", f"Scene keywords: {nn} / {p} / {o}. Describe it."]))[:templates]:
                add(target,"scene_description",tp,iid,"generation",ins,gt)
        unique(target, blk0)
        def blk1(target):
            a, b = rng.sample(VERB, 2); nn = rng.choice(NOUN); p = rng.choice(PLACE)
            gt = f"first the {nn} {a} to the {p} then the {nn} {b} until evening"
            for tp, ins in list(zip(["t0","t1"], [f"Explain the steps: {nn} {a} then {b} at the {p}.", f"In order, what does the {nn} do at the {p}?"]))[:templates]:
                add(target,"step_explanation",tp,iid,"generation",ins,gt)
        unique(target, blk1)
        def blk2(target):
            s = sentence(); o = rng.choice(OBJ)
            gt = f"suddenly {' '.join(s.split()[1:3])} finds {o} and smiles"
            for tp, ins in list(zip(["t0","t1"], [f"Continue the story: {s}.", f"Story so far: {s}. What happens next?"]))[:templates]:
                add(target,"story_continuation",tp,iid,"generation",ins,gt)
        unique(target, blk2)
    for i in range(n_train): one(i, tr, 1)
    for i in range(n_train, n_train+n_test): one(i, te, 2)
    return tr, te

def dump(path, rows):
    with open(path,"w") as f:
        for r in rows: f.write(json.dumps(r)+"\n")
pt = pretrain(); dump(os.path.join(HERE, "pretrain.jsonl"), pt)
tr, te = adapt(); dump(os.path.join(HERE, "adapt_train.jsonl"), tr); dump(os.path.join(HERE, "adapt_test.jsonl"), te)
print(len(pt), len(tr), len(te))
